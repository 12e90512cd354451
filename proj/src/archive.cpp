#include "trajret/archive.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <unordered_set>

#include "trajret/binary_io.hpp"
#include "trajret/error.hpp"

namespace trajret {

namespace {
constexpr char kMagic[8] = {'T', 'R', 'J', 'A', 'R', 'C', 'H', '\0'};
constexpr std::uint32_t kVersion = 1;

bool is_unit(const Eigen::VectorXd& v) {
  return v.allFinite() && std::abs(v.norm() - 1.0) <= PopulationArchive::kUnitTolerance;
}
}  // namespace

PopulationArchive PopulationArchive::build(std::vector<ArchiveEntry> entries, std::string provenance) {
  PopulationArchive a;
  a.provenance_ = std::move(provenance);
  std::unordered_set<std::string> ids;
  const Eigen::Index dim = entries.empty() ? 0 : entries.front().trajectory.size();
  for (const auto& e : entries) {
    if (e.subject_id.empty() || e.subject_id.size() > kIdWidth) {
      throw ConfigError("archive", "subject_id", "'" + e.subject_id + "' must have 1.." + std::to_string(kIdWidth) + " bytes");
    }
    if (!ids.insert(e.subject_id).second) throw ConfigError("archive", "subject_id", "duplicate id " + e.subject_id);
    if (e.trajectory.size() != dim) throw ConfigError("archive", "trajectory", e.subject_id + " has a different dimension");
    if (!is_unit(e.trajectory)) {
      throw ConfigError("archive", "trajectory", e.subject_id + " is not unit-norm (norm " +
                                                      std::to_string(e.trajectory.norm()) + ")");
    }
    if (e.label != 0 && e.label != 1) throw ConfigError("archive", "label", e.subject_id + " label must be 0 or 1");
  }
  a.vectors_.resize(static_cast<Eigen::Index>(entries.size()), dim);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    a.vectors_.row(static_cast<Eigen::Index>(i)) = entries[i].trajectory.transpose();
  }
  a.entries_ = std::move(entries);
  return a;
}

const ArchiveEntry* PopulationArchive::find(const std::string& subject_id) const {
  for (const auto& e : entries_) {
    if (e.subject_id == subject_id) return &e;
  }
  return nullptr;
}

RetrievalResult PopulationArchive::search(const Eigen::VectorXd& query, int k) const {
  if (entries_.empty()) throw Error("archive", "search on an empty archive");
  if (k < 1) throw ConfigError("archive", "k", "must be >= 1");
  if (query.size() != vectors_.cols()) throw ShapeError("archive", "query dimension does not match archive");
  if (!is_unit(query)) throw ConfigError("archive", "query", "must be unit-norm");

  const Eigen::VectorXd sims = vectors_ * query;
  std::vector<std::size_t> order(entries_.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(k), order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<long>(take), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      const double sa = sims[static_cast<Eigen::Index>(a)];
                      const double sb = sims[static_cast<Eigen::Index>(b)];
                      return sa > sb || (sa == sb && a < b);
                    });
  RetrievalResult r;
  r.k = k;
  for (std::size_t i = 0; i < take; ++i) {
    const auto& e = entries_[order[i]];
    r.neighbors.push_back({e.subject_id, sims[static_cast<Eigen::Index>(order[i])], e.label, e.age, e.sex, order[i]});
  }
  return r;
}

void PopulationArchive::save(const std::filesystem::path& path) const {
  io::Writer w;
  w.put_bytes(kMagic, sizeof(kMagic));
  w.put<std::uint32_t>(kVersion);
  w.put_string(provenance_);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(vectors_.cols()));
  w.put<std::uint64_t>(entries_.size());
  for (const auto& e : entries_) {
    char id[kIdWidth] = {};
    std::copy(e.subject_id.begin(), e.subject_id.end(), id);
    w.put_bytes(id, kIdWidth);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(e.label));
    w.put<double>(e.age);
    w.put<std::uint8_t>(e.sex == Sex::M ? 0 : 1);
    w.put_bytes(e.trajectory.data(), static_cast<std::size_t>(e.trajectory.size()) * sizeof(double));
  }
  w.seal();
  io::write_file_atomic(path.string(), w.bytes());
}

PopulationArchive PopulationArchive::load(const std::filesystem::path& path) {
  const std::string data = io::read_file(path.string());
  io::Reader r(data, path.string());
  char magic[8];
  r.get_bytes(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(magic)) != 0) throw ParseError("archive", path.string() + ": not an archive snapshot");
  const auto version = r.get<std::uint32_t>();
  if (version != kVersion) throw ParseError("archive", path.string() + ": unsupported version " + std::to_string(version));
  std::string provenance = r.get_string();
  const auto dim = r.get<std::uint32_t>();
  const auto size = r.get<std::uint64_t>();
  const std::size_t record = kIdWidth + 2 + sizeof(double) * (1 + dim);
  if (size > data.size() / record + 1) throw ParseError("archive", path.string() + ": truncated");
  std::vector<ArchiveEntry> entries;
  entries.reserve(size);
  for (std::uint64_t i = 0; i < size; ++i) {
    char id[kIdWidth];
    r.get_bytes(id, kIdWidth);
    ArchiveEntry e;
    e.subject_id.assign(id, strnlen(id, kIdWidth));
    e.label = r.get<std::uint8_t>();
    e.age = r.get<double>();
    const auto sex = r.get<std::uint8_t>();
    if (sex > 1) throw ParseError("archive", path.string() + ": bad sex code in record " + std::to_string(i));
    e.sex = sex == 0 ? Sex::M : Sex::F;
    e.trajectory.resize(dim);
    r.get_bytes(e.trajectory.data(), sizeof(double) * dim);
    entries.push_back(std::move(e));
  }
  r.finish();
  try {
    return build(std::move(entries), std::move(provenance));
  } catch (const Error& e) {
    throw ParseError("archive", path.string() + ": " + e.what());
  }
}

}  // namespace trajret
