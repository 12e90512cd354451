#include "trajret/synthdata.hpp"

#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "trajret/error.hpp"
#include "trajret/random.hpp"

namespace trajret {

namespace {

using nlohmann::json;

constexpr const char* kCohortFormat = "trajret-cohort";
constexpr int kCohortVersion = 1;

// Generator geometry, expressed for a 16^3 grid and scaled with volume_dim.
constexpr double kBrainRadius = 6.0;
constexpr double kBrainEdge = 0.7;
constexpr double kAnatomyFrequency = 0.6;
constexpr double kAnatomyAmplitude = 0.15;
constexpr int kAnatomyWaves = 4;
constexpr double kVoxelNoise = 0.03;
constexpr double kCavityDepth = 1.0;
constexpr double kCavityWidth = 1.3;
constexpr double kLocationJitter = 1.0;

std::string format_id(int index, int n) {
  const int width = std::max(3, static_cast<int>(std::to_string(n - 1).size()));
  std::string digits = std::to_string(index);
  return "s" + std::string(static_cast<std::size_t>(width) - digits.size(), '0') + digits;
}

json spec_to_json(const CohortSpec& s) {
  return {{"n_subjects", s.n_subjects},
          {"positive_fraction", s.positive_fraction},
          {"volume_dim", s.volume_dim},
          {"class_separation", s.class_separation},
          {"nuisance_scale", s.nuisance_scale},
          {"seed", s.seed}};
}

CohortSpec spec_from_json(const json& j) {
  CohortSpec s;
  s.n_subjects = j.at("n_subjects").get<int>();
  s.positive_fraction = j.at("positive_fraction").get<double>();
  s.volume_dim = j.at("volume_dim").get<int>();
  s.class_separation = j.at("class_separation").get<double>();
  s.nuisance_scale = j.value("nuisance_scale", 1.0);
  s.seed = j.at("seed").get<std::uint64_t>();
  return s;
}

Eigen::VectorXd voxels_from_json(const json& arr, int dim, const char* field) {
  const auto expected = static_cast<std::size_t>(dim) * dim * dim;
  if (!arr.is_array() || arr.size() != expected) {
    throw ParseError("synthdata", std::string(field) + " has wrong length");
  }
  Eigen::VectorXd v(static_cast<Eigen::Index>(expected));
  for (std::size_t i = 0; i < expected; ++i) v[static_cast<Eigen::Index>(i)] = arr[i].get<double>();
  return v;
}

}  // namespace

const char* to_string(Sex s) { return s == Sex::M ? "M" : "F"; }

Sex sex_from_string(const std::string& s) {
  if (s == "M") return Sex::M;
  if (s == "F") return Sex::F;
  throw ParseError("synthdata", "unknown sex '" + s + "'");
}

int CohortSpec::positive_count() const {
  return static_cast<int>(std::lround(n_subjects * positive_fraction));
}

void CohortSpec::validate() const {
  if (n_subjects < 2) throw ConfigError("synthdata", "n_subjects", "need at least 2 subjects");
  if (!(positive_fraction > 0.0 && positive_fraction < 1.0)) {
    throw ConfigError("synthdata", "positive_fraction", "must lie in (0, 1)");
  }
  const int pos = positive_count();
  if (pos < 1 || pos > n_subjects - 1) {
    throw ConfigError("synthdata", "positive_fraction",
                      "round(n_subjects * positive_fraction) must be in [1, n_subjects - 1]");
  }
  if (volume_dim < 4) throw ConfigError("synthdata", "volume_dim", "must be >= 4");
  if (!(class_separation >= 0.0) || !std::isfinite(class_separation)) {
    throw ConfigError("synthdata", "class_separation", "must be finite and >= 0");
  }
  if (!(nuisance_scale >= 0.0) || !std::isfinite(nuisance_scale)) {
    throw ConfigError("synthdata", "nuisance_scale", "must be finite and >= 0");
  }
}

Eigen::Vector3d planted_location_mean(const CohortSpec& spec, int label) {
  const double scale = spec.volume_dim / 16.0;
  const Eigen::Vector3d base(2.5, 0.0, 2.5);
  const Eigen::Vector3d direction = Eigen::Vector3d(1.0, 0.0, -1.0).normalized();
  const double half = 0.5 * spec.class_separation * kLocationJitter;
  return scale * (base + (label == 1 ? half : -half) * direction);
}

Cohort generate_cohort(const CohortSpec& spec) {
  spec.validate();
  const int n = spec.n_subjects;
  const int d = spec.volume_dim;
  const double scale = d / 16.0;
  const double centre = d / 2.0;

  std::vector<int> labels(static_cast<std::size_t>(n), 0);
  {
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    Rng rng = Rng::stream(spec.seed, 0xC0407ULL);
    rng.shuffle(order.begin(), order.end());
    for (int i = 0; i < spec.positive_count(); ++i) labels[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = 1;
  }

  // Shared grid quantities.
  const Eigen::Index voxels = static_cast<Eigen::Index>(d) * d * d;
  Eigen::MatrixX3d coords(voxels, 3);
  Eigen::VectorXd brain(voxels);
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) {
      for (int k = 0; k < d; ++k) {
        const Eigen::Index idx = (static_cast<Eigen::Index>(i) * d + j) * d + k;
        coords.row(idx) << i + 0.5, j + 0.5, k + 0.5;
        const double r = (coords.row(idx).array() - centre).matrix().norm();
        brain[idx] = 1.0 / (1.0 + std::exp((r - kBrainRadius * scale) / (kBrainEdge * scale)));
      }
    }
  }
  const Eigen::MatrixX3d unit = (coords.array() - centre) / centre;

  Cohort cohort;
  cohort.reserve(static_cast<std::size_t>(n));
  for (int s = 0; s < n; ++s) {
    Rng rng = Rng::stream(spec.seed, static_cast<std::uint64_t>(s) + 1);
    SubjectRecord rec;
    rec.subject_id = format_id(s, n);
    rec.label = labels[static_cast<std::size_t>(s)];
    rec.age = rng.uniform(18.0, 65.0);
    rec.sex = rng.bernoulli(0.5) ? Sex::F : Sex::M;

    Eigen::VectorXd anatomy = Eigen::VectorXd::Zero(voxels);
    for (int w = 0; w < kAnatomyWaves; ++w) {
      Eigen::Vector3d freq;
      for (int a = 0; a < 3; ++a) freq[a] = rng.normal(0.0, kAnatomyFrequency / scale);
      const double phase = rng.uniform(0.0, 2.0 * M_PI);
      anatomy.array() += kAnatomyAmplitude * ((coords * freq).array() + phase).cos();
    }
    Eigen::VectorXd pre = brain.array() * (1.0 + anatomy.array());
    for (Eigen::Index i = 0; i < voxels; ++i) pre[i] += rng.normal(0.0, kVoxelNoise);

    const Eigen::Vector3d mean = planted_location_mean(spec, rec.label);
    Eigen::Vector3d centre_v;
    for (int a = 0; a < 3; ++a) {
      const double sign = rng.bernoulli(0.5) ? 1.0 : -1.0;
      centre_v[a] = centre + sign * (mean[a] + rng.normal(0.0, kLocationJitter * scale));
    }
    const double width = kCavityWidth * scale;
    const Eigen::VectorXd dist2 = (coords.rowwise() - centre_v.transpose()).rowwise().squaredNorm();
    const Eigen::VectorXd cavity = -kCavityDepth * (-dist2.array() / (2.0 * width * width)).exp();

    Eigen::Vector3d drift;
    for (int a = 0; a < 3; ++a) drift[a] = rng.normal(0.0, spec.nuisance_scale);
    const Eigen::VectorXd bias = brain.array() * (unit * drift).array();

    Eigen::VectorXd post = pre + cavity + bias;
    for (Eigen::Index i = 0; i < voxels; ++i) post[i] += rng.normal(0.0, kVoxelNoise);

    rec.pre_volume = Volume(d, std::move(pre));
    rec.post_volume = Volume(d, std::move(post));
    cohort.push_back(std::move(rec));
  }
  return cohort;
}

void validate_cohort(const Cohort& cohort) {
  std::unordered_set<std::string> seen;
  for (const auto& r : cohort) {
    if (!seen.insert(r.subject_id).second) {
      throw ParseError("synthdata", "duplicate subject_id " + r.subject_id);
    }
    if (r.label != 0 && r.label != 1) {
      throw ParseError("synthdata", r.subject_id + ": label must be 0 or 1");
    }
    if (r.pre_volume.dim != r.post_volume.dim) {
      throw ShapeError("synthdata", r.subject_id + ": pre/post dims differ");
    }
    validate(r.pre_volume);
    validate(r.post_volume);
  }
}

void write_cohort(const std::filesystem::path& path, const Cohort& cohort,
                  const std::optional<CohortSpec>& spec) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("synthdata", "cannot open " + path.string() + " for writing");
  json header = {{"format", kCohortFormat}, {"version", kCohortVersion},
                 {"count", cohort.size()}};
  header["spec"] = spec ? spec_to_json(*spec) : json(nullptr);
  out << header.dump() << '\n';
  for (const auto& r : cohort) {
    json line = {{"subject_id", r.subject_id},
                 {"age", r.age},
                 {"sex", to_string(r.sex)},
                 {"label", r.label},
                 {"dims", {r.pre_volume.dim, r.pre_volume.dim, r.pre_volume.dim}}};
    line["pre_voxels"] = std::vector<double>(r.pre_volume.voxels.begin(), r.pre_volume.voxels.end());
    line["post_voxels"] = std::vector<double>(r.post_volume.voxels.begin(), r.post_volume.voxels.end());
    out << line.dump() << '\n';
  }
  if (!out) throw Error("synthdata", "write failed for " + path.string());
}

CohortFile read_cohort_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("synthdata", "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ParseError("synthdata", path.string() + ": missing header");

  CohortFile file;
  std::size_t expected = 0;
  try {
    const json header = json::parse(line);
    if (header.at("format") != kCohortFormat || header.at("version") != kCohortVersion) {
      throw ParseError("synthdata", path.string() + ": unsupported format or version");
    }
    expected = header.at("count").get<std::size_t>();
    if (!header.at("spec").is_null()) file.spec = spec_from_json(header.at("spec"));
  } catch (const json::exception& e) {
    throw ParseError("synthdata", path.string() + ":1: bad header: " + e.what());
  }

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      SubjectRecord r;
      r.subject_id = j.at("subject_id").get<std::string>();
      r.age = j.at("age").get<double>();
      r.sex = sex_from_string(j.at("sex").get<std::string>());
      r.label = j.at("label").get<int>();
      const auto dims = j.at("dims").get<std::vector<int>>();
      if (dims.size() != 3 || dims[0] != dims[1] || dims[1] != dims[2]) {
        throw ParseError("synthdata", "dims must be cubic");
      }
      r.pre_volume = Volume(dims[0], voxels_from_json(j.at("pre_voxels"), dims[0], "pre_voxels"));
      r.post_volume = Volume(dims[0], voxels_from_json(j.at("post_voxels"), dims[0], "post_voxels"));
      file.subjects.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw ParseError("synthdata", path.string() + ":" + std::to_string(line_no) +
                                        ": record " + std::to_string(line_no - 1) + ": " + e.what());
    } catch (const Error& e) {
      throw ParseError("synthdata", path.string() + ":" + std::to_string(line_no) +
                                        ": record " + std::to_string(line_no - 1) + ": " + e.what());
    }
  }
  if (file.subjects.size() != expected) {
    throw ParseError("synthdata", path.string() + ": truncated, expected " +
                                      std::to_string(expected) + " records, found " +
                                      std::to_string(file.subjects.size()));
  }
  validate_cohort(file.subjects);
  return file;
}

Cohort read_cohort(const std::filesystem::path& path) { return read_cohort_file(path).subjects; }

}  // namespace trajret
