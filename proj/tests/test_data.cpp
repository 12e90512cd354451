#include <doctest.h>

#include <fstream>

#include "support.hpp"
#include "trajret/error.hpp"
#include "trajret/synthdata.hpp"
#include "trajret/volume.hpp"

using namespace trajret;

TEST_CASE("zscore uses the supra-mean voxels") {
  Volume v(4, 0.0);
  v.at(0, 0, 0) = 2.0;
  v.at(3, 3, 3) = 4.0;
  const Volume z = zscore_normalize(v);
  CHECK(z.at(0, 0, 0) == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(z.at(3, 3, 3) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(z.at(1, 1, 1) == doctest::Approx(-3.0).epsilon(1e-15));
  CHECK(z.dim == 4);
}

TEST_CASE("zscore leaves an already-normalized volume alone") {
  // supra-mean subset is {-1, +1}: mean 0, deviation 1
  Volume w(4, -3.0);
  w.at(0, 0, 0) = -1.0;
  w.at(0, 0, 1) = 1.0;
  const Volume z = zscore_normalize(w);
  CHECK((z.voxels - w.voxels).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("zscore rejects a constant volume") {
  CHECK_THROWS_AS(zscore_normalize(Volume(4, 3.0)), NumericError);
}

TEST_CASE("zscore is idempotent on planted cohorts") {
  CohortSpec spec;
  spec.n_subjects = 12;
  spec.positive_fraction = 0.5;
  const Cohort c = generate_cohort(spec);
  for (const auto& s : c) {
    const Volume once = zscore_normalize(s.post_volume);
    const Volume twice = zscore_normalize(once);
    CHECK((once.voxels - twice.voxels).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("crop_or_pad") {
  SUBCASE("identity") {
    Volume v(16);
    Rng rng(1);
    for (Eigen::Index i = 0; i < v.size(); ++i) v.voxels[i] = rng.normal();
    CHECK(crop_or_pad(v, 16) == v);
  }
  SUBCASE("pad 4 -> 6 centres the ones") {
    const Volume p = crop_or_pad(Volume(4, 1.0), 6);
    CHECK(p.dim == 6);
    CHECK((p.voxels.array() == 0.0).count() == 6 * 6 * 6 - 4 * 4 * 4);
    CHECK((p.voxels.array() == 0.0).count() == 152);
    for (int i = 0; i < 6; ++i)
      for (int j = 0; j < 6; ++j)
        for (int k = 0; k < 6; ++k) {
          const bool inside = i >= 1 && i <= 4 && j >= 1 && j <= 4 && k >= 1 && k <= 4;
          CHECK(p.at(i, j, k) == (inside ? 1.0 : 0.0));
        }
  }
  SUBCASE("crop 6 -> 4 by index oracle") {
    Volume v(6);
    for (Eigen::Index i = 0; i < v.size(); ++i) v.voxels[i] = static_cast<double>(i);
    const Volume c = crop_or_pad(v, 4);
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j)
        for (int k = 0; k < 4; ++k) CHECK(c.at(i, j, k) == v.at(i + 1, j + 1, k + 1));
  }
  SUBCASE("odd differences go to the high side") {
    Volume v(5);
    for (Eigen::Index i = 0; i < v.size(); ++i) v.voxels[i] = static_cast<double>(i);
    const Volume c = crop_or_pad(v, 4);
    CHECK(c.at(0, 0, 0) == v.at(0, 0, 0));
    CHECK(c.at(3, 3, 3) == v.at(3, 3, 3));
    const Volume p = crop_or_pad(Volume(4, 1.0), 5);
    CHECK(p.at(0, 0, 0) == 1.0);
    CHECK(p.at(4, 4, 4) == 0.0);
  }
  SUBCASE("pad then crop back is the identity") {
    Volume v(5);
    Rng rng(3);
    for (Eigen::Index i = 0; i < v.size(); ++i) v.voxels[i] = rng.normal();
    for (int big : {5, 6, 7, 9}) CHECK(crop_or_pad(crop_or_pad(v, big), 5) == v);
  }
}

TEST_CASE("flip is an involution") {
  Volume v(4);
  Rng rng(9);
  for (Eigen::Index i = 0; i < v.size(); ++i) v.voxels[i] = rng.normal();
  const std::array<bool, 3> axes{true, false, true};
  CHECK_FALSE(flip(v, axes) == v);
  CHECK(flip(flip(v, axes), axes) == v);
}

TEST_CASE("volume invariants") {
  CHECK_THROWS_AS(validate(Volume(3, 0.0)), Error);
  Volume v(4, 0.0);
  v.voxels[5] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(validate(v), Error);
}

TEST_CASE("default cohort has 215 favourable and 53 unfavourable subjects") {
  const Cohort c = generate_cohort(CohortSpec{});
  REQUIRE(c.size() == 268);
  long pos = 0;
  for (const auto& s : c) pos += s.label;
  CHECK(pos == 53);
  CHECK(static_cast<long>(c.size()) - pos == 215);
  validate_cohort(c);
  for (const auto& s : c) {
    CHECK(s.age >= 18.0);
    CHECK(s.age <= 65.0);
    CHECK(s.pre_volume.dim == 16);
  }
}

TEST_CASE("zero separation gives a balanced, signal-free cohort") {
  CohortSpec spec;
  spec.n_subjects = 10;
  spec.positive_fraction = 0.5;
  spec.class_separation = 0.0;
  spec.seed = 7;
  const Cohort c = generate_cohort(spec);
  long pos = 0;
  for (const auto& s : c) pos += s.label;
  CHECK(pos == 5);
  CHECK(planted_location_mean(spec, 0) == planted_location_mean(spec, 1));
  spec.class_separation = 3.0;
  CHECK_FALSE(planted_location_mean(spec, 0) == planted_location_mean(spec, 1));
}

TEST_CASE("generation is a pure function of the spec") {
  CohortSpec spec;
  spec.n_subjects = 20;
  spec.positive_fraction = 0.25;
  CHECK(generate_cohort(spec) == generate_cohort(spec));
  testing::TempDir dir;
  write_cohort(dir / "a.jsonl", generate_cohort(spec), spec);
  write_cohort(dir / "b.jsonl", generate_cohort(spec), spec);
  CHECK(testing::slurp(dir / "a.jsonl") == testing::slurp(dir / "b.jsonl"));
  spec.seed = 43;
  CHECK_FALSE(generate_cohort(spec) == generate_cohort(CohortSpec{20, 0.25}));
}

TEST_CASE("invalid specs name the field") {
  CohortSpec spec;
  spec.positive_fraction = 0.001;
  try {
    spec.validate();
    FAIL("expected a ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.field() == "positive_fraction");
  }
  spec = CohortSpec{};
  spec.volume_dim = 2;
  CHECK_THROWS_AS(generate_cohort(spec), ConfigError);
  spec = CohortSpec{};
  spec.class_separation = -1.0;
  CHECK_THROWS_AS(generate_cohort(spec), ConfigError);
}

TEST_CASE("cohort files round-trip") {
  testing::TempDir dir;
  SUBCASE("empty") {
    write_cohort(dir / "e.jsonl", {});
    CHECK(read_cohort(dir / "e.jsonl").empty());
  }
  SUBCASE("full default cohort, bit-exact") {
    const CohortSpec spec;
    const Cohort c = generate_cohort(spec);
    write_cohort(dir / "c.jsonl", c, spec);
    const CohortFile back = read_cohort_file(dir / "c.jsonl");
    REQUIRE(back.subjects.size() == c.size());
    for (std::size_t i = 0; i < c.size(); ++i) {
      CHECK(back.subjects[i].subject_id == c[i].subject_id);
      CHECK(back.subjects[i].age == c[i].age);
      CHECK(back.subjects[i].sex == c[i].sex);
      CHECK(back.subjects[i].label == c[i].label);
      CHECK(back.subjects[i].pre_volume == c[i].pre_volume);
      CHECK(back.subjects[i].post_volume == c[i].post_volume);
    }
    REQUIRE(back.spec.has_value());
    CHECK(*back.spec == spec);
  }
  SUBCASE("truncated file is a parse error") {
    CohortSpec spec;
    spec.n_subjects = 6;
    spec.positive_fraction = 0.5;
    write_cohort(dir / "t.jsonl", generate_cohort(spec), spec);
    const std::string full = testing::slurp(dir / "t.jsonl");
    {
      std::ofstream out(dir / "cut.jsonl", std::ios::binary);
      out << full.substr(0, full.size() * 2 / 3);
    }
    CHECK_THROWS_AS(read_cohort(dir / "cut.jsonl"), ParseError);
    // dropping whole records is caught by the header count
    const auto last_line = full.rfind('\n', full.size() - 2);
    {
      std::ofstream out(dir / "short.jsonl", std::ios::binary);
      out << full.substr(0, last_line + 1);
    }
    CHECK_THROWS_AS(read_cohort(dir / "short.jsonl"), ParseError);
  }
  SUBCASE("missing file") { CHECK_THROWS_AS(read_cohort(dir / "nope.jsonl"), ParseError); }
}
