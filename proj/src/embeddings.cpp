#include "trajret/embeddings.hpp"

#include <fstream>
#include <sstream>

#include "trajret/binary_io.hpp"
#include "trajret/error.hpp"

namespace trajret {

using nlohmann::json;

namespace {
constexpr const char* kFormat = "trajret-embeddings";
constexpr int kVersion = 1;
}  // namespace

void write_embeddings(const std::filesystem::path& path, const std::vector<ArchiveEntry>& rows,
                      const json& provenance) {
  std::ostringstream os;
  os << json{{"format", kFormat}, {"version", kVersion}, {"count", rows.size()}, {"provenance", provenance}}.dump()
     << "\n";
  for (const auto& r : rows) {
    std::vector<double> v(r.trajectory.data(), r.trajectory.data() + r.trajectory.size());
    os << json{{"subject_id", r.subject_id}, {"label", r.label}, {"age", r.age}, {"sex", to_string(r.sex)},
               {"trajectory", v}}
              .dump()
       << "\n";
  }
  io::write_file_atomic(path.string(), os.str());
}

EmbeddingsFile read_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("embeddings", "cannot open " + path.string());
  EmbeddingsFile file;
  std::string line;
  std::size_t count = 0;
  if (!std::getline(in, line)) throw ParseError("embeddings", path.string() + ": empty file");
  try {
    const json header = json::parse(line);
    if (header.at("format") != kFormat) throw ParseError("embeddings", path.string() + ": not an embeddings file");
    if (header.at("version") != kVersion) throw ParseError("embeddings", path.string() + ": unsupported version");
    count = header.at("count").get<std::size_t>();
    file.provenance = header.at("provenance");
  } catch (const json::exception& e) {
    throw ParseError("embeddings", path.string() + ":1: " + e.what());
  }
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      ArchiveEntry e;
      e.subject_id = j.at("subject_id").get<std::string>();
      e.label = j.at("label").get<int>();
      e.age = j.at("age").get<double>();
      e.sex = sex_from_string(j.at("sex").get<std::string>());
      const auto v = j.at("trajectory").get<std::vector<double>>();
      e.trajectory = Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
      file.rows.push_back(std::move(e));
    } catch (const json::exception& e) {
      throw ParseError("embeddings", path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (file.rows.size() != count) {
    throw ParseError("embeddings", path.string() + ": truncated (header says " + std::to_string(count) + " rows, found " +
                                       std::to_string(file.rows.size()) + ")");
  }
  return file;
}

}  // namespace trajret
