#pragma once

// Random archive/query instances compared against the brute-force sort.
// Shared by the unit tests and the acceptance binary.

#include <random>
#include <string>

#include "oracles.hpp"
#include "trajret/archive.hpp"

namespace retrieval {

struct Mismatch {
  bool ok = true;
  std::string detail;
};

// Instance `seed`: lattice unit vectors (size <= 64, dim 4..16, many exact
// ties, including duplicated rows) and a random k in 1..size+3.
inline Mismatch check_instance(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const int dim = std::uniform_int_distribution<int>(4, 16)(rng);
  const int size = std::uniform_int_distribution<int>(1, 64)(rng);
  std::vector<trajret::ArchiveEntry> entries;
  Eigen::MatrixXd rows(size, dim);
  for (int i = 0; i < size; ++i) {
    Eigen::VectorXd v;
    if (i > 0 && std::uniform_int_distribution<int>(0, 4)(rng) == 0) {
      v = rows.row(std::uniform_int_distribution<int>(0, i - 1)(rng)).transpose();
    } else {
      v = oracle::lattice_unit_vector(dim, rng);
    }
    rows.row(i) = v.transpose();
    entries.push_back({"e" + std::to_string(i), v, i % 2, 20.0 + i, trajret::Sex::F});
  }
  const auto archive = trajret::PopulationArchive::build(entries);
  const Eigen::VectorXd q = std::uniform_int_distribution<int>(0, 2)(rng) == 0
                                ? Eigen::VectorXd(rows.row(std::uniform_int_distribution<int>(0, size - 1)(rng)).transpose())
                                : oracle::lattice_unit_vector(dim, rng);
  const int k = std::uniform_int_distribution<int>(1, size + 3)(rng);

  const auto result = archive.search(q, k);
  const auto expected = oracle::sorted_dots(rows, q);
  const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(k), expected.size());
  Mismatch m;
  if (result.neighbors.size() != take) {
    m.ok = false;
    m.detail = "seed " + std::to_string(seed) + ": returned " + std::to_string(result.neighbors.size()) +
               " neighbours, expected " + std::to_string(take);
    return m;
  }
  for (std::size_t i = 0; i < take; ++i) {
    const auto& n = result.neighbors[i];
    if (static_cast<long>(n.position) != expected[i].first || n.similarity != expected[i].second ||
        n.subject_id != "e" + std::to_string(expected[i].first)) {
      m.ok = false;
      m.detail = "seed " + std::to_string(seed) + ": rank " + std::to_string(i) + " differs";
      return m;
    }
  }
  return m;
}

}  // namespace retrieval
