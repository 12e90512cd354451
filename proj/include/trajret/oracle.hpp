#pragma once

#include <Eigen/Core>
#include <cmath>
#include <limits>
#include <nlohmann/json_fwd.hpp>
#include <optional>
#include <string>
#include <vector>

#include "trajret/archive.hpp"
#include "trajret/synthdata.hpp"

namespace trajret {

struct OracleConfig {
  int k = 5;
  double age_gap = 15.0;  // infinity disables the filter
  double neighbor_weight = 0.60;
  double p_success = 0.20;
  double p_failure = 0.80;
  double threshold = 0.50;

  bool age_filter_enabled() const { return std::isfinite(age_gap); }
  void validate() const;
};

struct QueryMeta {
  std::string subject_id;
  double age = 0.0;
  Sex sex = Sex::M;
};

struct NeighborSummary {
  int rank = 0;  // 1-based position in the prompt, cited as "#rank"
  std::string subject_id;
  double age = 0.0;  // rounded to one decimal, as shown in the prompt
  Sex sex = Sex::M;
  int label = 0;
  double similarity = 0.0;
};

/// Everything a verdict provider is allowed to see. `text()` renders the exact
/// prompt; the structured fields let auditors check claims without parsing it.
struct EvidencePrompt {
  QueryMeta query;  // age rounded to one decimal
  std::vector<NeighborSummary> neighbors;
  double age_gap = 15.0;
  std::string instruction;

  std::string text() const;
  bool within_gap(const NeighborSummary& n) const;
};

/// "favourable" for label 0 (treatment success), "unfavourable" for label 1.
const char* outcome_word(int label);
double round_age(double age);
std::string format_age(double age);

EvidencePrompt build_prompt(const QueryMeta& query, const RetrievalResult& result, const OracleConfig& cfg);

class VerdictProvider {
 public:
  virtual ~VerdictProvider() = default;
  /// Returns a response beginning with SUCCESS or FAILURE. May throw ProviderError.
  virtual std::string respond(const EvidencePrompt& prompt) const = 0;
  virtual std::string name() const = 0;
  virtual bool thread_safe() const { return true; }
};

/// Deterministic stand-in for a language model: applies the age filter
/// literally and reports the filtered majority, citing only prompt facts.
class RuleBasedProvider final : public VerdictProvider {
 public:
  std::string respond(const EvidencePrompt& prompt) const override;
  std::string name() const override { return "rule-based"; }
};

enum class VerdictToken { Success, Failure, Unparseable };
const char* to_string(VerdictToken t);

struct ParsedVerdict {
  VerdictToken token = VerdictToken::Unparseable;
  std::string justification;
};

ParsedVerdict parse_verdict(const std::string& response);
double verdict_probability(VerdictToken token, const OracleConfig& cfg);

/// Fraction of returned neighbours with label 1.
double neighbor_vote(const RetrievalResult& result);

struct Fusion {
  double p_q = 0.0;
  int label = 0;
};
Fusion fuse(double p_neighbor, double p_llm, const OracleConfig& cfg);

struct OracleQuery {
  QueryMeta meta;
  Eigen::VectorXd trajectory;
};

struct OracleVerdict {
  std::string subject_id;
  VerdictToken token = VerdictToken::Unparseable;
  std::string justification;
  std::string raw_response;
  std::optional<std::string> provider_error;
  double p_neighbor = 0.0;
  double p_llm = 0.0;
  double p_q = 0.0;
  int predicted_label = 0;
  RetrievalResult retrieval;
  EvidencePrompt prompt;
};

OracleVerdict predict(const OracleQuery& query, const PopulationArchive& archive,
                      const VerdictProvider& provider, const OracleConfig& cfg);

/// Reuses a prior retrieval; used by weight sweeps and ablations.
OracleVerdict predict_from_retrieval(const QueryMeta& query, RetrievalResult retrieval,
                                     const VerdictProvider& provider, const OracleConfig& cfg);

struct AuditFlags {
  bool hallucination = false;
  bool age_filter_adherent = true;
  std::vector<std::string> findings;
};

/// Claims are read from the justification: "#N" citations, "age X" mentions,
/// and the sex/outcome words attached to a citation. Any claim that does not
/// match the prompt marks a hallucination; citing a neighbour outside the age
/// gap breaks adherence.
AuditFlags audit_justification(const std::string& justification, const EvidencePrompt& prompt);

nlohmann::json prompt_to_json(const EvidencePrompt& p);
EvidencePrompt prompt_from_json(const nlohmann::json& j);
/// Includes the structured prompt under "evidence" so logs can be audited later.
nlohmann::json verdict_to_json(const OracleVerdict& v);
void write_verdict_log(const std::string& path, const std::vector<OracleVerdict>& verdicts);

}  // namespace trajret
