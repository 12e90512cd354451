#include "trajret/oracle.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <regex>
#include <sstream>

#include "trajret/error.hpp"

namespace trajret {

void OracleConfig::validate() const {
  if (k < 1) throw ConfigError("oracle", "k", "must be >= 1");
  if (!(age_gap >= 0.0)) throw ConfigError("oracle", "age_gap", "must be >= 0 (infinity disables)");
  if (!(neighbor_weight >= 0.0 && neighbor_weight <= 1.0)) {
    throw ConfigError("oracle", "neighbor_weight", "must lie in [0, 1]");
  }
  if (!(p_success > 0.0 && p_success < p_failure && p_failure < 1.0)) {
    throw ConfigError("oracle", "p_success/p_failure", "need 0 < p_success < p_failure < 1");
  }
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw ConfigError("oracle", "threshold", "must lie in [0, 1]");
}

const char* outcome_word(int label) { return label == 1 ? "unfavourable" : "favourable"; }

double round_age(double age) { return std::round(age * 10.0) / 10.0; }

std::string format_age(double age) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f", round_age(age));
  return buf;
}

namespace {

std::string format_gap(double gap) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", gap);
  return buf;
}

const char* sex_letter(Sex s) { return s == Sex::M ? "M" : "F"; }

std::string cite(const NeighborSummary& n) {
  return "#" + std::to_string(n.rank) + " age " + format_age(n.age) + " " + sex_letter(n.sex) + " " +
         outcome_word(n.label);
}

}  // namespace

bool EvidencePrompt::within_gap(const NeighborSummary& n) const {
  return !std::isfinite(age_gap) || std::abs(n.age - query.age) <= age_gap;
}

std::string EvidencePrompt::text() const {
  std::ostringstream os;
  os << "Query patient: age " << format_age(query.age) << ", sex " << sex_letter(query.sex) << ".\n";
  os << "Most similar historical trajectories:\n";
  for (const auto& n : neighbors) {
    char sim[32];
    std::snprintf(sim, sizeof(sim), "%.3f", n.similarity);
    os << "#" << n.rank << ": age " << format_age(n.age) << ", sex " << sex_letter(n.sex) << ", outcome "
       << outcome_word(n.label) << ", similarity " << sim << "\n";
  }
  os << instruction;
  return os.str();
}

EvidencePrompt build_prompt(const QueryMeta& query, const RetrievalResult& result, const OracleConfig& cfg) {
  EvidencePrompt p;
  p.query = query;
  p.query.age = round_age(query.age);
  p.age_gap = cfg.age_gap;
  int rank = 0;
  for (const auto& n : result.neighbors) {
    if (rank == cfg.k) break;
    ++rank;
    p.neighbors.push_back({rank, n.subject_id, round_age(n.age), n.sex, n.label, n.similarity});
  }
  std::string directive = cfg.age_filter_enabled()
                              ? "Mentally filter out any historical match whose age differs from the query by more than " +
                                    format_gap(cfg.age_gap) + " years.\n"
                              : "No age filter applies; weigh every historical match.\n";
  p.instruction = directive +
                  "Begin your response with exactly one token, SUCCESS or FAILURE, followed by one sentence "
                  "of justification that cites matches by their # number.\n";
  return p;
}

std::string RuleBasedProvider::respond(const EvidencePrompt& prompt) const {
  std::vector<const NeighborSummary*> used;
  for (const auto& n : prompt.neighbors) {
    if (prompt.within_gap(n)) used.push_back(&n);
  }
  const bool fallback = used.empty();
  if (fallback) {
    for (const auto& n : prompt.neighbors) used.push_back(&n);
  }
  int bad = 0;
  for (const auto* n : used) bad += n->label;
  const int total = static_cast<int>(used.size());
  const int good = total - bad;
  const int verdict_label = bad >= good ? 1 : 0;
  const int support = verdict_label == 1 ? bad : good;

  std::string out = verdict_label == 1 ? "FAILURE: " : "SUCCESS: ";
  if (total == 0) return out + "no historical matches were available.";
  if (fallback) {
    // Matches outside the gap are counted but never cited, so the answer stays
    // adherent to the filter even when it has to fall back.
    out += "no match lies within " + format_gap(prompt.age_gap) + " years of the query, so all " +
           std::to_string(total) + " matches were counted and " + std::to_string(support) + " were " +
           outcome_word(verdict_label) + ".";
    return out;
  }
  out += std::to_string(support) + " of " + std::to_string(total) +
         (prompt.neighbors.size() == used.size() ? " matches" : " age-compatible matches") + " were " +
         outcome_word(verdict_label) + " (";
  bool first = true;
  for (const auto* n : used) {
    if (n->label != verdict_label) continue;
    if (!first) out += "; ";
    out += cite(*n);
    first = false;
  }
  return out + ").";
}

const char* to_string(VerdictToken t) {
  switch (t) {
    case VerdictToken::Success: return "SUCCESS";
    case VerdictToken::Failure: return "FAILURE";
    case VerdictToken::Unparseable: return "UNPARSEABLE";
  }
  return "UNPARSEABLE";
}

ParsedVerdict parse_verdict(const std::string& response) {
  ParsedVerdict out;
  std::size_t i = 0;
  while (i < response.size() && !std::isalpha(static_cast<unsigned char>(response[i]))) ++i;
  std::size_t j = i;
  while (j < response.size() && std::isalpha(static_cast<unsigned char>(response[j]))) ++j;
  std::string word = response.substr(i, j - i);
  for (auto& c : word) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  if (word == "SUCCESS") {
    out.token = VerdictToken::Success;
  } else if (word == "FAILURE") {
    out.token = VerdictToken::Failure;
  } else {
    out.justification = response;
    return out;
  }
  // Drop the separator after the token: spaces, ASCII punctuation, and UTF-8
  // dashes.
  while (j < response.size()) {
    const auto c = static_cast<unsigned char>(response[j]);
    if (std::isspace(c) || c == ':' || c == '-' || c == ',' || c == '.' || c == ';') {
      ++j;
    } else if (c == 0xE2 && j + 2 < response.size() && static_cast<unsigned char>(response[j + 1]) == 0x80 &&
               (static_cast<unsigned char>(response[j + 2]) == 0x94 ||
                static_cast<unsigned char>(response[j + 2]) == 0x93)) {
      j += 3;
    } else {
      break;
    }
  }
  out.justification = response.substr(j);
  return out;
}

double verdict_probability(VerdictToken token, const OracleConfig& cfg) {
  return token == VerdictToken::Success ? cfg.p_success : cfg.p_failure;
}

double neighbor_vote(const RetrievalResult& result) {
  if (result.neighbors.empty()) throw Error("oracle", "neighbor vote over an empty retrieval");
  int positives = 0;
  for (const auto& n : result.neighbors) positives += n.label;
  return static_cast<double>(positives) / static_cast<double>(result.neighbors.size());
}

Fusion fuse(double p_neighbor, double p_llm, const OracleConfig& cfg) {
  Fusion f;
  f.p_q = cfg.neighbor_weight * p_neighbor + (1.0 - cfg.neighbor_weight) * p_llm;
  f.label = f.p_q > cfg.threshold ? 1 : 0;
  return f;
}

OracleVerdict predict_from_retrieval(const QueryMeta& query, RetrievalResult retrieval,
                                     const VerdictProvider& provider, const OracleConfig& cfg) {
  OracleVerdict v;
  v.subject_id = query.subject_id;
  v.retrieval = std::move(retrieval);
  v.p_neighbor = neighbor_vote(v.retrieval);
  v.prompt = build_prompt(query, v.retrieval, cfg);
  try {
    v.raw_response = provider.respond(v.prompt);
  } catch (const Error& e) {
    v.provider_error = e.what();
  }
  if (!v.provider_error) {
    auto parsed = parse_verdict(v.raw_response);
    v.token = parsed.token;
    v.justification = std::move(parsed.justification);
  }
  v.p_llm = verdict_probability(v.token, cfg);
  const Fusion f = fuse(v.p_neighbor, v.p_llm, cfg);
  v.p_q = f.p_q;
  v.predicted_label = f.label;
  return v;
}

OracleVerdict predict(const OracleQuery& query, const PopulationArchive& archive,
                      const VerdictProvider& provider, const OracleConfig& cfg) {
  cfg.validate();
  return predict_from_retrieval(query.meta, archive.search(query.trajectory, cfg.k), provider, cfg);
}

AuditFlags audit_justification(const std::string& justification, const EvidencePrompt& prompt) {
  AuditFlags flags;
  auto flag = [&](std::string what) {
    flags.hallucination = true;
    flags.findings.push_back(std::move(what));
  };

  std::vector<double> known_ages{prompt.query.age};
  for (const auto& n : prompt.neighbors) known_ages.push_back(n.age);
  static const std::regex age_re(R"(\bage[d]?\s+(\d+(?:\.\d+)?))", std::regex::icase);
  for (std::sregex_iterator it(justification.begin(), justification.end(), age_re), end; it != end; ++it) {
    const double a = std::stod((*it)[1].str());
    bool found = false;
    for (double k : known_ages) found = found || std::abs(k - a) < 1e-9;
    if (!found) flag("age " + (*it)[1].str() + " is not in the prompt");
  }

  // Each citation runs from "#N" to the next separator; facts inside it must
  // describe neighbour N.
  static const std::regex cite_re(R"(#(\d+)([^#;)]*))");
  static const std::regex sex_re(R"(\b(M|F|male|female)\b)", std::regex::icase);
  static const std::regex outcome_re(R"(\b(un)?favou?rable\b)", std::regex::icase);
  for (std::sregex_iterator it(justification.begin(), justification.end(), cite_re), end; it != end; ++it) {
    const std::string num = (*it)[1].str();
    const std::size_t rank = num.size() > 6 ? 0 : std::stoul(num);
    if (rank < 1 || rank > prompt.neighbors.size()) {
      flag("#" + num + " does not name a listed match");
      continue;
    }
    const NeighborSummary& n = prompt.neighbors[rank - 1];
    const std::string clause = (*it)[2].str();
    std::smatch m;
    if (std::regex_search(clause, m, age_re) && std::abs(std::stod(m[1].str()) - n.age) >= 1e-9) {
      flag("#" + num + " cited with age " + m[1].str());
    }
    if (std::regex_search(clause, m, sex_re)) {
      const char c = static_cast<char>(std::toupper(static_cast<unsigned char>(m[1].str()[0])));
      if (c != sex_letter(n.sex)[0]) flag("#" + num + " cited with sex " + m[1].str());
    }
    if (std::regex_search(clause, m, outcome_re) && (m[1].matched ? 1 : 0) != n.label) {
      flag("#" + num + " cited as " + m[0].str());
    }
    if (!prompt.within_gap(n)) {
      flags.age_filter_adherent = false;
      flags.findings.push_back("#" + num + " is outside the age gap");
    }
  }
  return flags;
}

nlohmann::json prompt_to_json(const EvidencePrompt& p) {
  nlohmann::json neighbors = nlohmann::json::array();
  for (const auto& n : p.neighbors) {
    neighbors.push_back({{"rank", n.rank}, {"subject_id", n.subject_id}, {"age", n.age}, {"sex", to_string(n.sex)},
                         {"label", n.label}, {"similarity", n.similarity}});
  }
  return {{"query", {{"subject_id", p.query.subject_id}, {"age", p.query.age}, {"sex", to_string(p.query.sex)}}},
          {"age_gap", std::isfinite(p.age_gap) ? nlohmann::json(p.age_gap) : nlohmann::json(nullptr)},
          {"neighbors", neighbors},
          {"instruction", p.instruction}};
}

EvidencePrompt prompt_from_json(const nlohmann::json& j) {
  EvidencePrompt p;
  try {
    const auto& q = j.at("query");
    p.query = {q.at("subject_id").get<std::string>(), q.at("age").get<double>(), sex_from_string(q.at("sex").get<std::string>())};
    p.age_gap = j.at("age_gap").is_null() ? std::numeric_limits<double>::infinity() : j.at("age_gap").get<double>();
    for (const auto& n : j.at("neighbors")) {
      p.neighbors.push_back({n.at("rank").get<int>(), n.at("subject_id").get<std::string>(), n.at("age").get<double>(),
                             sex_from_string(n.at("sex").get<std::string>()), n.at("label").get<int>(),
                             n.at("similarity").get<double>()});
    }
    p.instruction = j.at("instruction").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("oracle", std::string("evidence prompt: ") + e.what());
  }
  return p;
}

nlohmann::json verdict_to_json(const OracleVerdict& v) {
  nlohmann::json neighbors = nlohmann::json::array();
  for (const auto& n : v.retrieval.neighbors) {
    neighbors.push_back({{"subject_id", n.subject_id},
                         {"similarity", n.similarity},
                         {"label", n.label},
                         {"age", n.age},
                         {"sex", to_string(n.sex)}});
  }
  return {{"subject_id", v.subject_id},
          {"token", to_string(v.token)},
          {"justification", v.justification},
          {"raw_response", v.raw_response},
          {"provider_error", v.provider_error ? nlohmann::json(*v.provider_error) : nlohmann::json(nullptr)},
          {"p_neighbor", v.p_neighbor},
          {"p_llm", v.p_llm},
          {"p_q", v.p_q},
          {"predicted_label", v.predicted_label},
          {"neighbors", neighbors},
          {"prompt", v.prompt.text()},
          {"evidence", prompt_to_json(v.prompt)}};
}

void write_verdict_log(const std::string& path, const std::vector<OracleVerdict>& verdicts) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("oracle", "cannot open verdict log " + path);
  for (const auto& v : verdicts) out << verdict_to_json(v).dump() << "\n";
  if (!out) throw Error("oracle", "failed writing verdict log " + path);
}

}  // namespace trajret
