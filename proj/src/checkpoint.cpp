#include "trajret/checkpoint.hpp"

#include <fstream>
#include <iterator>

#include "trajret/binary_io.hpp"
#include "trajret/error.hpp"

namespace trajret {

namespace io {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("io", "cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_atomic(const std::string& path, const std::string& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("io", "cannot open " + tmp + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("io", "write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace io

namespace ad {

namespace {
constexpr char kMagic[8] = {'T', 'R', 'J', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

const Matrix& Checkpoint::at(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t.value;
  }
  throw ParseError("checkpoint", "missing tensor '" + name + "'");
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  io::Writer w;
  w.put_bytes(kMagic, sizeof(kMagic));
  w.put<std::uint32_t>(kVersion);
  w.put_string(ckpt.config_json);
  w.put<std::uint64_t>(ckpt.tensors.size());
  for (const auto& t : ckpt.tensors) {
    w.put_string(t.name);
    w.put<std::uint64_t>(static_cast<std::uint64_t>(t.value.rows()));
    w.put<std::uint64_t>(static_cast<std::uint64_t>(t.value.cols()));
    // Row-major payload regardless of Eigen's storage order.
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = t.value;
    w.put_bytes(rm.data(), static_cast<std::size_t>(rm.size()) * sizeof(double));
  }
  w.seal();
  io::write_file_atomic(path.string(), w.bytes());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string data = io::read_file(path.string());
  io::Reader r(data, path.string());
  char magic[8];
  r.get_bytes(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(magic)) != 0) throw ParseError("checkpoint", path.string() + ": not a checkpoint file");
  const auto version = r.get<std::uint32_t>();
  if (version != kVersion) {
    throw ParseError("checkpoint", path.string() + ": unsupported version " + std::to_string(version));
  }
  Checkpoint ckpt;
  ckpt.config_json = r.get_string();
  const auto count = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = r.get_string();
    const auto rows = r.get<std::uint64_t>();
    const auto cols = r.get<std::uint64_t>();
    if (cols != 0 && rows > r.remaining() / sizeof(double) / cols) throw ParseError("checkpoint", path.string() + ": implausible shape");
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(
        static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    r.get_bytes(rm.data(), static_cast<std::size_t>(rows * cols) * sizeof(double));
    t.value = rm;
    ckpt.tensors.push_back(std::move(t));
  }
  r.finish();
  return ckpt;
}

}  // namespace ad
}  // namespace trajret
