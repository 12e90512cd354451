// trajret command-line driver. Each subcommand is one pipeline phase; all
// randomness flows from --seed.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <nlohmann/json.hpp>
#include <sstream>
#include <unordered_set>

#include "trajret/archive.hpp"
#include "trajret/checkpoint.hpp"
#include "trajret/config.hpp"
#include "trajret/crossval.hpp"
#include "trajret/embeddings.hpp"
#include "trajret/error.hpp"
#include "trajret/external_provider.hpp"
#include "trajret/report.hpp"
#include "trajret/training.hpp"

using namespace trajret;
using nlohmann::json;

namespace {

// --config reader: a JSON object whose keys are flag long names; flags of a
// subcommand sit in a nested object named after it.
class JsonConfig : public CLI::Config {
 public:
  std::string to_config(const CLI::App* app, bool default_also, bool, std::string) const override {
    return dump(app, default_also).dump(2);
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    json j;
    try {
      input >> j;
    } catch (const json::exception& e) {
      throw CLI::ConversionError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw CLI::ConversionError("config must be a JSON object");
    std::vector<CLI::ConfigItem> items;
    flatten(j, {}, items);
    return items;
  }

 private:
  static json dump(const CLI::App* app, bool default_also) {
    json j = json::object();
    for (const CLI::Option* opt : app->get_options({})) {
      if (opt->get_lnames().empty() || !opt->get_configurable()) continue;
      const std::string name = opt->get_lnames()[0];
      if (opt->count() > 0) {
        j[name] = opt->get_type_size() == 0 ? json(true) : json(opt->results().size() == 1 ? json(opt->results()[0]) : json(opt->results()));
      } else if (default_also && !opt->get_default_str().empty()) {
        j[name] = opt->get_default_str();
      }
    }
    for (const CLI::App* sub : app->get_subcommands({})) j[sub->get_name()] = dump(sub, default_also);
    return j;
  }

  static std::string scalar(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    if (v.is_number()) return v.dump();
    if (v.is_null()) return "inf";
    throw CLI::ConversionError("config values must be scalars or arrays of scalars");
  }

  static void flatten(const json& j, std::vector<std::string> parents, std::vector<CLI::ConfigItem>& out) {
    for (const auto& [key, value] : j.items()) {
      if (value.is_object()) {
        auto p = parents;
        p.push_back(key);
        flatten(value, p, out);
        continue;
      }
      CLI::ConfigItem item;
      item.parents = parents;
      item.name = key;
      if (value.is_array()) {
        for (const auto& v : value) item.inputs.push_back(scalar(v));
      } else {
        item.inputs.push_back(scalar(value));
      }
      out.push_back(std::move(item));
    }
  }
};

struct Globals {
  std::uint64_t seed = 42;
  int threads = 1;
  bool verbose = false;
};

double parse_age_gap(const std::string& s) {
  if (s == "inf" || s == "none" || s == "off") return std::numeric_limits<double>::infinity();
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError("cli", "age-gap", "'" + s + "' is not a number or 'inf'");
}

std::unordered_set<std::string> id_set(const std::vector<std::string>& ids) {
  std::unordered_set<std::string> out;
  for (const auto& id : ids) {
    if (!id.empty() && id[0] == '@') {
      std::ifstream in(id.substr(1));
      if (!in) throw ConfigError("cli", "ids", "cannot open id list " + id.substr(1));
      for (std::string line; std::getline(in, line);) {
        if (!line.empty()) out.insert(line);
      }
    } else {
      out.insert(id);
    }
  }
  return out;
}

struct EncoderFlags {
  EncoderConfig cfg;
};

void add_encoder_flags(CLI::App* c, EncoderConfig& e) {
  c->add_option("--dim", e.volume_dim, "Volume edge length after crop/pad")->capture_default_str();
  c->add_option("--backbone-widths", e.backbone_widths, "Backbone layer widths")->delimiter(',')->capture_default_str();
  c->add_option("--projection-hidden", e.projection_hidden, "Projection head hidden width")->capture_default_str();
  c->add_option("--trajectory-dim", e.trajectory_dim, "Trajectory vector dimension")->capture_default_str();
  c->add_option("--dropout", e.projection_dropout, "Projection head dropout")->capture_default_str();
  c->add_option("--temperature", e.temperature, "SupCon temperature")->capture_default_str();
  c->add_option("--focal-gamma", e.focal.gamma)->capture_default_str();
  c->add_option("--focal-alpha", e.focal.alpha)->capture_default_str();
  c->add_option("--positive-class-weight", e.focal.class_weight)->capture_default_str();
  c->add_option("--epochs", e.epochs)->capture_default_str();
  c->add_option("--micro-batch", e.micro_batch)->capture_default_str();
  c->add_option("--accumulation-steps", e.optimizer.accumulation_steps)->capture_default_str();
  c->add_option("--lr", e.optimizer.learning_rate)->capture_default_str();
  c->add_option("--weight-decay", e.optimizer.weight_decay)->capture_default_str();
  c->add_option("--clip-norm", e.optimizer.clip_norm)->capture_default_str();
  c->add_option("--cosine-t-max", e.optimizer.cosine_t_max)->capture_default_str();
  c->add_option("--validation-fraction", e.validation_fraction)->capture_default_str();
  c->add_option_function<std::string>(
       "--batchnorm-mode", [&e](const std::string& s) { e.batchnorm_mode = batchnorm_mode_from_string(s); },
       "effective-batch, micro-batch, or identity")
      ->check(CLI::IsMember({"effective-batch", "micro-batch", "identity"}))
      ->default_str("effective-batch");
}

void add_oracle_flags(CLI::App* c, OracleConfig& o) {
  c->add_option("--k", o.k, "Neighbours retrieved per query")->capture_default_str();
  c->add_option_function<std::string>(
       "--age-gap", [&o](const std::string& s) { o.age_gap = parse_age_gap(s); }, "Age filter in years, or 'inf'")
      ->default_str("15");
  c->add_option("--neighbor-weight", o.neighbor_weight, "Weight of the neighbour vote in the fusion")->capture_default_str();
  c->add_option("--p-success", o.p_success)->capture_default_str();
  c->add_option("--p-failure", o.p_failure)->capture_default_str();
  c->add_option("--threshold", o.threshold, "Decision threshold on p_q (strict >)")->capture_default_str();
}

SiameseEncoder load_encoder(const std::string& path, json* config_out = nullptr) {
  const ad::Checkpoint ckpt = ad::load_checkpoint(path);
  json meta;
  try {
    meta = json::parse(ckpt.config_json);
  } catch (const json::exception& e) {
    throw ParseError("cli", path + ": checkpoint config is not JSON");
  }
  if (!meta.is_object() || meta.value("format", "") != "trajret-encoder") {
    throw ParseError("cli", path + ": not an encoder checkpoint");
  }
  EncoderConfig cfg;
  merge_json(meta.at("encoder"), cfg);
  if (config_out != nullptr) *config_out = meta;
  return SiameseEncoder::from_checkpoint(ckpt, cfg);
}

std::unique_ptr<VerdictProvider> make_provider(const std::string& kind, const std::string& endpoint) {
  if (kind == "rule-based") return std::make_unique<RuleBasedProvider>();
  EndpointConfig ec = EndpointConfig::from_environment();
  if (!endpoint.empty()) ec.url = endpoint;
  if (ec.url.empty()) throw ConfigError("cli", "provider", "external provider needs --endpoint or TRAJRET_VERDICT_URL");
  return std::make_unique<ExternalProvider>(ec);
}

void print_verdict(const OracleVerdict& v) {
  std::printf("%s\t%s\tp_neighbor=%.4f\tp_llm=%.2f\tp_q=%.4f\tlabel=%d\t%s\n", v.subject_id.c_str(), to_string(v.token),
              v.p_neighbor, v.p_llm, v.p_q, v.predicted_label, v.justification.c_str());
}

void print_methods(const EvalReport& r) {
  std::printf("%-15s %7s %7s %7s %7s %7s %9s\n", "method", "auc", "bal_acc", "sens", "spec", "f1", "best_thr");
  for (const auto& m : r.methods) {
    const auto& a = m.aggregate;
    std::printf("%-15s %7.4f %7.4f %7.4f %7.4f %7.4f %9.2f\n", to_string(m.method), a.auc, a.balanced_accuracy,
                a.sensitivity, a.specificity, a.f1, m.sweep.best().threshold);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Trajectory encoding, archive retrieval, and oracle evaluation on synthetic longitudinal cohorts"};
  app.config_formatter(std::make_shared<JsonConfig>());
  app.set_config("--config", "", "JSON file of flag values; subcommand flags nest under the subcommand name");
  app.allow_config_extras(false);
  app.fallthrough();
  app.require_subcommand(1);

  Globals g;
  app.add_option("--seed", g.seed, "Seed for every random stream")->capture_default_str();
  app.add_option("--threads", g.threads, "Worker threads (results do not depend on it)")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  app.add_flag("-v,--verbose", g.verbose, "Progress on stderr");

  // gen-data
  CohortSpec spec;
  std::string gen_out;
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic cohort (JSON lines)");
  gen->add_option("--n", spec.n_subjects, "Subjects")->capture_default_str();
  gen->add_option("--pos-frac", spec.positive_fraction, "Fraction with the unfavourable label")->capture_default_str();
  gen->add_option("--dim", spec.volume_dim, "Volume edge length")->capture_default_str();
  gen->add_option("--separation", spec.class_separation, "Class separation of the planted signal")->capture_default_str();
  gen->add_option("--nuisance", spec.nuisance_scale, "Label-independent drift amplitude")->capture_default_str();
  gen->add_option("--out", gen_out, "Output cohort file")->required();

  // train
  EncoderConfig train_cfg;
  std::string train_cohort, train_out;
  std::vector<std::string> train_exclude;
  auto* train = app.add_subcommand("train", "Train a Siamese encoder on a cohort");
  train->add_option("--cohort", train_cohort)->required()->check(CLI::ExistingFile);
  train->add_option("--out", train_out, "Encoder checkpoint")->required();
  train->add_option("--exclude", train_exclude, "Subject ids to leave out (or @file)")->delimiter(',');
  add_encoder_flags(train, train_cfg);

  // embed
  std::string embed_ckpt, embed_cohort, embed_out;
  auto* embed = app.add_subcommand("embed", "Encode a cohort into trajectory vectors");
  embed->add_option("--checkpoint", embed_ckpt)->required()->check(CLI::ExistingFile);
  embed->add_option("--cohort", embed_cohort)->required()->check(CLI::ExistingFile);
  embed->add_option("--out", embed_out, "Embeddings file (JSON lines)")->required();

  // build-archive
  std::string ba_embeddings, ba_out;
  std::vector<std::string> ba_exclude;
  auto* build = app.add_subcommand("build-archive", "Freeze embeddings into a population archive");
  build->add_option("--embeddings", ba_embeddings)->required()->check(CLI::ExistingFile);
  build->add_option("--out", ba_out, "Archive snapshot")->required();
  build->add_option("--exclude", ba_exclude, "Subject ids to leave out (or @file)")->delimiter(',');

  // retrieve
  std::string rt_archive, rt_query, rt_embeddings;
  int rt_k = 5;
  auto* retrieve = app.add_subcommand("retrieve", "Top-k neighbours of one subject");
  retrieve->add_option("--archive", rt_archive)->required()->check(CLI::ExistingFile);
  retrieve->add_option("--query-id", rt_query)->required();
  retrieve->add_option("--embeddings", rt_embeddings, "Query source; defaults to the archive itself")
      ->check(CLI::ExistingFile);
  retrieve->add_option("--k", rt_k)->capture_default_str()->check(CLI::PositiveNumber);

  // predict
  OracleConfig pr_oracle;
  std::string pr_archive, pr_embeddings, pr_log, pr_provider = "rule-based", pr_endpoint;
  std::vector<std::string> pr_ids;
  auto* pred = app.add_subcommand("predict", "Run the retrieval oracle on query subjects");
  pred->add_option("--archive", pr_archive)->required()->check(CLI::ExistingFile);
  pred->add_option("--embeddings", pr_embeddings, "Query trajectories")->required()->check(CLI::ExistingFile);
  pred->add_option("--query-id", pr_ids, "Queries (default: every embedded subject not in the archive)")->delimiter(',');
  pred->add_option("--provider", pr_provider)->check(CLI::IsMember({"rule-based", "external"}))->capture_default_str();
  pred->add_option("--endpoint", pr_endpoint, "Verdict endpoint URL (else TRAJRET_VERDICT_URL)");
  pred->add_option("--log", pr_log, "Verdict log (JSON lines)");
  add_oracle_flags(pred, pr_oracle);

  // evaluate / ablate / weight-sweep share the cross-validation flags
  struct CvCommand {
    CLI::App* app = nullptr;
    EvalConfig cfg;
    std::string cohort, out, log;
    std::vector<std::string> methods;
    std::vector<double> weights;
    bool tables = false;
  };
  CvCommand evaluate, ablate, sweep;
  auto add_cv = [&](CvCommand& c, const char* name, const char* help, std::vector<std::string> default_methods) {
    c.app = app.add_subcommand(name, help);
    c.methods = std::move(default_methods);
    c.app->add_option("--cohort", c.cohort)->required()->check(CLI::ExistingFile);
    c.app->add_option("--out", c.out, "Report JSON")->required();
    c.app->add_option("--folds", c.cfg.n_folds)->capture_default_str();
    c.app->add_option("--mlp-max-epochs", c.cfg.mlp.max_epochs)->capture_default_str();
    c.app->add_option("--mlp-patience", c.cfg.mlp.patience)->capture_default_str();
    c.app->add_option("--log", c.log, "Verdict log of the first oracle method (JSON lines)");
    add_encoder_flags(c.app, c.cfg.encoder);
    add_oracle_flags(c.app, c.cfg.oracle);
  };
  add_cv(evaluate, "evaluate", "Stratified cross-validation of one or more methods", {"M5"});
  evaluate.app->add_option("--method", evaluate.methods, "M3, M3b, M4, M5, M6-style, random-encoder, k1-retrieval, no-age-filter")
      ->delimiter(',')
      ->capture_default_str();
  evaluate.app->add_flag("--tables", evaluate.tables, "Also write ROC, threshold, and ablation CSV tables");
  add_cv(ablate, "ablate", "Oracle ablations (random encoder, k = 1, no age filter) against M5",
         {"M5", "random-encoder", "k1-retrieval", "no-age-filter"});
  ablate.app->add_option("--method", ablate.methods)->delimiter(',')->capture_default_str();
  add_cv(sweep, "weight-sweep", "Calibration error of the fusion across neighbour weights", {"M5"});
  sweep.app->add_option("--weights", sweep.weights, "Neighbour weights (default 0.0, 0.1, ..., 1.0)")->delimiter(',');

  // audit
  std::string audit_log;
  auto* audit = app.add_subcommand("audit", "Audit justifications in a verdict log");
  audit->add_option("--log", audit_log)->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::string msg = e.what();
    for (auto& ch : msg) ch = ch == '\n' ? ' ' : ch;
    std::cerr << "error: usage: " << msg << "\n";
    return 2;
  }

  const ProgressFn progress = [&](const std::string& s) {
    if (g.verbose) std::cerr << s << "\n";
  };

  try {
    if (*gen) {
      spec.seed = g.seed;
      spec.validate();
      const Cohort cohort = generate_cohort(spec);
      write_cohort(gen_out, cohort, spec);
      std::printf("wrote %zu subjects (%d favourable, %d unfavourable) to %s\n", cohort.size(),
                  spec.n_subjects - spec.positive_count(), spec.positive_count(), gen_out.c_str());
    } else if (*train) {
      train_cfg.seed = g.seed;
      const Cohort raw = read_cohort(train_cohort);
      const auto excluded = id_set(train_exclude);
      Cohort subjects;
      for (const auto& s : preprocess(raw, train_cfg.volume_dim)) {
        if (!excluded.contains(s.subject_id)) subjects.push_back(s);
      }
      const TrainResult r = train_encoder(subjects, train_cfg, {}, [&](const EpochLog& log) {
        if (g.verbose) {
          std::fprintf(stderr, "epoch %d lr %.3g train %.5f val %.5f\n", log.epoch, log.learning_rate, log.train_loss,
                       log.val_loss);
        }
      });
      std::vector<std::string> ex(excluded.begin(), excluded.end());
      std::sort(ex.begin(), ex.end());
      const json meta = {{"format", "trajret-encoder"},
                         {"encoder", to_json(train_cfg)},
                         {"cohort_digest", cohort_digest(raw)},
                         {"excluded", ex},
                         {"subjects", subjects.size()},
                         {"best_epoch", r.best_epoch}};
      ad::save_checkpoint(train_out, r.encoder.to_checkpoint(meta.dump()));
      std::printf("trained on %zu subjects, best epoch %d, wrote %s\n", subjects.size(), r.best_epoch, train_out.c_str());
    } else if (*embed) {
      json meta;
      const SiameseEncoder enc = load_encoder(embed_ckpt, &meta);
      const Cohort raw = read_cohort(embed_cohort);
      const Cohort prepared = preprocess(raw, enc.config().volume_dim);
      std::vector<ArchiveEntry> rows;
      for (const auto& s : prepared) {
        rows.push_back({s.subject_id, enc.encode_pair(s.pre_volume, s.post_volume).values, s.label, s.age, s.sex});
      }
      write_embeddings(embed_out, rows, {{"checkpoint", meta}, {"cohort_digest", cohort_digest(raw)}});
      std::printf("embedded %zu subjects into %d dimensions, wrote %s\n", rows.size(), enc.config().trajectory_dim,
                  embed_out.c_str());
    } else if (*build) {
      const EmbeddingsFile file = read_embeddings(ba_embeddings);
      const auto excluded = id_set(ba_exclude);
      std::vector<ArchiveEntry> entries;
      for (const auto& r : file.rows) {
        if (!excluded.contains(r.subject_id)) entries.push_back(r);
      }
      std::vector<std::string> ex(excluded.begin(), excluded.end());
      std::sort(ex.begin(), ex.end());
      const json prov = {{"embeddings", file.provenance}, {"excluded", ex}};
      const PopulationArchive archive = PopulationArchive::build(std::move(entries), prov.dump());
      archive.save(ba_out);
      std::printf("archive of %zu entries (dim %d), wrote %s\n", archive.size(), archive.dim(), ba_out.c_str());
    } else if (*retrieve) {
      const PopulationArchive archive = PopulationArchive::load(rt_archive);
      Eigen::VectorXd q;
      if (!rt_embeddings.empty()) {
        const EmbeddingsFile file = read_embeddings(rt_embeddings);
        for (const auto& r : file.rows) {
          if (r.subject_id == rt_query) q = r.trajectory;
        }
      } else if (const ArchiveEntry* e = archive.find(rt_query)) {
        q = e->trajectory;
      }
      if (q.size() == 0) throw ConfigError("cli", "query-id", rt_query + " not found");
      const RetrievalResult r = archive.search(q, rt_k);
      std::printf("rank\tsubject_id\tsimilarity\tlabel\tage\tsex\n");
      for (std::size_t i = 0; i < r.neighbors.size(); ++i) {
        const auto& n = r.neighbors[i];
        std::printf("%zu\t%s\t%.6f\t%d\t%.1f\t%s\n", i + 1, n.subject_id.c_str(), n.similarity, n.label, n.age,
                    to_string(n.sex));
      }
    } else if (*pred) {
      pr_oracle.validate();
      const PopulationArchive archive = PopulationArchive::load(pr_archive);
      const EmbeddingsFile file = read_embeddings(pr_embeddings);
      const auto wanted = id_set(pr_ids);
      const auto provider = make_provider(pr_provider, pr_endpoint);
      std::vector<OracleVerdict> verdicts;
      std::unordered_set<std::string> found;
      for (const auto& r : file.rows) {
        const bool in_archive = archive.find(r.subject_id) != nullptr;
        if (wanted.empty() ? in_archive : !wanted.contains(r.subject_id)) continue;
        if (in_archive) throw LeakageError(r.subject_id, "the archive it is queried against");
        found.insert(r.subject_id);
        verdicts.push_back(predict({{r.subject_id, r.age, r.sex}, r.trajectory}, archive, *provider, pr_oracle));
        print_verdict(verdicts.back());
      }
      for (const auto& id : wanted) {
        if (!found.contains(id)) throw ConfigError("cli", "query-id", id + " not found in " + pr_embeddings);
      }
      if (!pr_log.empty()) write_verdict_log(pr_log, verdicts);
    } else if (*evaluate.app || *ablate.app || *sweep.app) {
      CvCommand& c = *evaluate.app ? evaluate : (*ablate.app ? ablate : sweep);
      c.cfg.seed = g.seed;
      c.cfg.encoder.seed = g.seed;
      c.cfg.mlp.seed = g.seed;
      c.cfg.threads = g.threads;
      c.cfg.methods.clear();
      for (const auto& m : c.methods) c.cfg.methods.push_back(method_from_string(m));
      const Cohort cohort = read_cohort(c.cohort);
      std::vector<double> grid;
      if (*sweep.app) grid = c.weights.empty() ? default_weight_grid() : c.weights;
      RuleBasedProvider provider;
      const EvalReport report = run_cv(cohort, c.cfg, provider, grid, progress);
      write_report(c.out, report);
      if (c.tables || *ablate.app || *sweep.app) write_report_tables(c.out, report);
      if (!c.log.empty()) {
        for (const auto& m : report.methods) {
          if (!m.verdicts.empty()) {
            write_verdict_log(c.log, m.verdicts);
            break;
          }
        }
      }
      print_methods(report);
      if (*sweep.app) {
        std::printf("\n%-15s %15s %7s %7s\n", "neighbor_weight", "calibration_mae", "auc", "bal_acc");
        for (const auto& w : report.weights) {
          std::printf("%-15.2f %15.4f %7.4f %7.4f\n", w.neighbor_weight, w.calibration_mae, w.auc, w.balanced_accuracy);
        }
      }
    } else if (*audit) {
      std::ifstream in(audit_log);
      std::size_t n = 0, halluc = 0, adherent = 0, line_no = 0;
      for (std::string line; std::getline(in, line);) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
          j = json::parse(line);
        } catch (const json::exception& e) {
          throw ParseError("cli", audit_log + ":" + std::to_string(line_no) + ": " + e.what());
        }
        const EvidencePrompt prompt = prompt_from_json(j.at("evidence"));
        const AuditFlags flags = audit_justification(j.at("justification").get<std::string>(), prompt);
        ++n;
        halluc += flags.hallucination ? 1 : 0;
        adherent += flags.age_filter_adherent ? 1 : 0;
        for (const auto& f : flags.findings) {
          std::printf("%s\t%s\n", j.at("subject_id").get<std::string>().c_str(), f.c_str());
        }
      }
      std::printf("responses %zu\thallucination_rate %.4f\tage_filter_adherence %.4f\n", n,
                  n ? static_cast<double>(halluc) / n : 0.0, n ? static_cast<double>(adherent) / n : 1.0);
    }
  } catch (const Error& e) {
    std::string msg = e.what();
    for (auto& ch : msg) ch = ch == '\n' ? ' ' : ch;
    std::cerr << "error: " << e.module() << ": " << msg << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
