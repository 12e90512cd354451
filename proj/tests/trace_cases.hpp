#pragma once

// The three end-to-end inference traces: all-favourable neighbours with the
// rule-based provider, all-unfavourable neighbours, and all-favourable
// neighbours with a provider whose answer cannot be parsed.

#include <string>
#include <vector>

#include "trajret/archive.hpp"
#include "trajret/oracle.hpp"

namespace traces {

class MumblingProvider final : public trajret::VerdictProvider {
 public:
  std::string respond(const trajret::EvidencePrompt&) const override { return "The patient will probably be fine."; }
  std::string name() const override { return "mumbling"; }
};

struct Trace {
  std::string name;
  trajret::OracleVerdict verdict;
  double expected_literal = 0.0;  // the decimal value of the blend
  double blend = 0.0;             // w * p_neighbor + (1 - w) * p_llm, evaluated here
  int expected_label = 0;
};

inline trajret::PopulationArchive uniform_archive(int label) {
  std::vector<trajret::ArchiveEntry> entries;
  for (int i = 0; i < 5; ++i) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(6);
    v[i] = 1.0;
    entries.push_back({"n" + std::to_string(i), v, label, 40.0 + i, i % 2 ? trajret::Sex::F : trajret::Sex::M});
  }
  return trajret::PopulationArchive::build(entries);
}

inline std::vector<Trace> run() {
  const trajret::OracleConfig cfg;
  Eigen::VectorXd q = Eigen::VectorXd::Constant(6, 0.0);
  q.head(5).setConstant(1.0 / std::sqrt(5.0));
  q.normalize();
  const trajret::OracleQuery query{{"query", 45.0, trajret::Sex::F}, q};
  const trajret::RuleBasedProvider rule;
  const MumblingProvider mumble;

  std::vector<Trace> out;
  auto add = [&](std::string name, int label, const trajret::VerdictProvider& p, double literal, int expect) {
    Trace t;
    t.name = std::move(name);
    t.verdict = trajret::predict(query, uniform_archive(label), p, cfg);
    t.expected_literal = literal;
    t.blend = cfg.neighbor_weight * t.verdict.p_neighbor + (1.0 - cfg.neighbor_weight) * t.verdict.p_llm;
    t.expected_label = expect;
    out.push_back(std::move(t));
  };
  add("all favourable, rule-based", 0, rule, 0.08, 0);
  add("all unfavourable, rule-based", 1, rule, 0.92, 1);
  add("all favourable, unparseable", 0, mumble, 0.32, 0);
  return out;
}

}  // namespace traces
