#include <doctest.h>

#include <sstream>

#include "cli_runner.hpp"
#include "support.hpp"
#include "trajret/archive.hpp"
#include "trajret/synthdata.hpp"

using namespace trajret;

namespace {

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST_CASE("gen-data writes the default cohort shape") {
  testing::TempDir dir;
  const auto r = cli::run("gen-data --dim 4 --out " + (dir / "c.jsonl").string());
  REQUIRE(r.status == 0);
  CHECK(r.out.find("215 favourable, 53 unfavourable") != std::string::npos);
  const Cohort c = read_cohort((dir / "c.jsonl").string());
  CHECK(c.size() == 268);
  CHECK(std::count_if(c.begin(), c.end(), [](const auto& s) { return s.label == 1; }) == 53);
}

TEST_CASE("train, embed, archive, retrieve, predict, audit") {
  testing::TempDir dir;
  auto p = [&](const char* f) { return (dir / f).string(); };
  REQUIRE(cli::run("gen-data --n 30 --pos-frac 0.3 --dim 8 --out " + p("c.jsonl")).status == 0);
  REQUIRE(cli::run("train --cohort " + p("c.jsonl") + " --out " + p("enc.ckpt") + " --exclude s000,s001 " +
                   cli::small_encoder_flags())
              .status == 0);
  REQUIRE(cli::run("embed --checkpoint " + p("enc.ckpt") + " --cohort " + p("c.jsonl") + " --out " + p("z.jsonl"))
              .status == 0);
  REQUIRE(cli::run("build-archive --embeddings " + p("z.jsonl") + " --exclude s000,s001 --out " + p("a.bin")).status ==
          0);
  CHECK(PopulationArchive::load(p("a.bin")).size() == 28);

  const auto rt = cli::run("retrieve --archive " + p("a.bin") + " --embeddings " + p("z.jsonl") +
                           " --query-id s000 --k 5");
  REQUIRE(rt.status == 0);
  const auto rows = lines(rt.out);
  REQUIRE(rows.size() == 6);
  double prev = 2.0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    std::istringstream in(rows[i]);
    std::size_t rank;
    std::string id;
    double sim;
    in >> rank >> id >> sim;
    CHECK(rank == i);
    CHECK(sim <= prev);
    prev = sim;
  }

  const auto pr = cli::run("predict --archive " + p("a.bin") + " --embeddings " + p("z.jsonl") + " --log " +
                           p("v.jsonl"));
  REQUIRE(pr.status == 0);
  CHECK(lines(testing::slurp(p("v.jsonl"))).size() == 2);
  const auto au = cli::run("audit --log " + p("v.jsonl"));
  REQUIRE(au.status == 0);
  CHECK(au.out.find("responses 2\thallucination_rate 0.0000\tage_filter_adherence 1.0000") != std::string::npos);

  SUBCASE("querying a subject against an archive that holds it is leakage") {
    CHECK(cli::run("predict --archive " + p("a.bin") + " --embeddings " + p("z.jsonl") + " --query-id s005").status ==
          1);
  }
}

TEST_CASE("evaluate is byte-identical across runs and thread counts") {
  testing::TempDir dir;
  auto p = [&](const char* f) { return (dir / f).string(); };
  REQUIRE(cli::run("gen-data --n 40 --pos-frac 0.3 --dim 8 --out " + p("c.jsonl")).status == 0);
  const std::string common = "evaluate --cohort " + p("c.jsonl") + " --method M4,M5 --tables " + cli::small_encoder_flags();
  REQUIRE(cli::run("--threads 1 " + common + " --out " + p("a.json")).status == 0);
  REQUIRE(cli::run("--threads 3 " + common + " --out " + p("b.json")).status == 0);
  REQUIRE(cli::run("--threads 1 " + common + " --out " + p("c.json")).status == 0);
  const std::string a = testing::slurp(p("a.json"));
  CHECK(a.size() > 100);
  CHECK(a == testing::slurp(p("b.json")));
  CHECK(a == testing::slurp(p("c.json")));
  CHECK(testing::slurp(p("a.roc.csv")) == testing::slurp(p("b.roc.csv")));
}

TEST_CASE("exit codes") {
  testing::TempDir dir;
  CHECK(cli::run("--help").status == 0);
  CHECK(cli::run("").status == 2);
  CHECK(cli::run("gen-data --bogus --out x").status == 2);
  CHECK(cli::run("evaluate --cohort /nonexistent --out x").status == 2);
  {
    std::ofstream bad(dir / "bad.jsonl");
    bad << "not a cohort\n";
  }
  CHECK(cli::run("evaluate --cohort " + (dir / "bad.jsonl").string() + " --out " + (dir / "r.json").string()).status ==
        1);
  CHECK(cli::run("gen-data --n 1 --out " + (dir / "c.jsonl").string()).status == 1);
}

TEST_CASE("a JSON config file stands in for flags") {
  testing::TempDir dir;
  auto p = [&](const char* f) { return (dir / f).string(); };
  REQUIRE(cli::run("gen-data --n 40 --pos-frac 0.3 --dim 8 --out " + p("c.jsonl")).status == 0);
  {
    std::ofstream cfg(dir / "cfg.json");
    cfg << R"({"seed": 42, "evaluate": {"dim": 6, "backbone-widths": [32, 24], "projection-hidden": 16,
              "trajectory-dim": 8, "epochs": 3, "lr": 0.001, "method": ["M4", "M5"]}})";
    std::ofstream bad(dir / "bad.json");
    bad << R"({"evaluate": {"epochz": 3}})";
  }
  REQUIRE(cli::run("--config " + p("cfg.json") + " evaluate --cohort " + p("c.jsonl") + " --out " + p("a.json")).status ==
          0);
  REQUIRE(cli::run("evaluate --cohort " + p("c.jsonl") + " --method M4,M5 " + cli::small_encoder_flags() + " --out " +
                   p("b.json"))
              .status == 0);
  CHECK(testing::slurp(p("a.json")) == testing::slurp(p("b.json")));
  CHECK(cli::run("--config " + p("bad.json") + " evaluate --cohort " + p("c.jsonl") + " --out " + p("x.json")).status ==
        2);
}
