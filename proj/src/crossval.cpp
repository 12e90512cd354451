#include "trajret/crossval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <exception>
#include <limits>
#include <mutex>
#include <thread>
#include <unordered_set>

#include "trajret/binary_io.hpp"
#include "trajret/config.hpp"
#include "trajret/error.hpp"
#include "trajret/random.hpp"

namespace trajret {

using nlohmann::json;

namespace {

// Runs fn(0..n-1) on up to `threads` workers. The exception of the lowest
// failing index is rethrown so failures do not depend on scheduling.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  const auto workers = static_cast<std::size_t>(std::clamp<long>(threads, 1, static_cast<long>(std::max<std::size_t>(n, 1))));
  std::vector<std::exception_ptr> errors(n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            fn(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::vector<const Volume*> volumes(const Cohort& cohort, const std::vector<std::size_t>& idx, bool post) {
  std::vector<const Volume*> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(post ? &cohort[i].post_volume : &cohort[i].pre_volume);
  return out;
}

Eigen::MatrixXd encode(const SiameseEncoder& enc, const Cohort& cohort, const std::vector<std::size_t>& idx) {
  return enc.encode_rows(volumes_to_rows(volumes(cohort, idx, false)), volumes_to_rows(volumes(cohort, idx, true)));
}

std::vector<int> labels_of(const Cohort& cohort, const std::vector<std::size_t>& idx) {
  std::vector<int> y;
  y.reserve(idx.size());
  for (std::size_t i : idx) y.push_back(cohort[i].label);
  return y;
}

std::unique_ptr<ClassifierModel> make_classifier(Method m, const EvalConfig& cfg) {
  switch (m) {
    case Method::M3: return std::make_unique<LogisticRegression>(cfg.logistic);
    case Method::M3b: return std::make_unique<MlpClassifier>(cfg.mlp);
    case Method::M4: return std::make_unique<KnnClassifier>(cfg.oracle.k);
    case Method::M6Style: {
      std::vector<std::unique_ptr<ClassifierModel>> members;
      members.push_back(std::make_unique<KnnClassifier>(cfg.oracle.k));
      members.push_back(std::make_unique<LogisticRegression>(cfg.logistic));
      for (std::uint64_t seed : {99u, 123u}) {
        MlpConfig mc = cfg.mlp;
        mc.seed = seed;
        members.push_back(std::make_unique<MlpClassifier>(mc));
      }
      return std::make_unique<SoftVoteEnsemble>(std::move(members));
    }
    default: break;
  }
  throw ConfigError("eval", "method", std::string(to_string(m)) + " is not a classifier method");
}

OracleConfig oracle_for(Method m, const OracleConfig& base) {
  OracleConfig c = base;
  if (m == Method::K1Retrieval) c.k = 1;
  if (m == Method::NoAgeFilter) c.age_gap = std::numeric_limits<double>::infinity();
  return c;
}


}  // namespace

FoldPlan stratified_kfold(const Cohort& cohort, int n_folds, std::uint64_t seed) {
  if (n_folds < 2) throw ConfigError("eval", "n_folds", "must be >= 2");
  FoldPlan plan;
  plan.n_folds = n_folds;
  plan.seed = seed;
  plan.folds.resize(static_cast<std::size_t>(n_folds));
  Rng rng = Rng::stream(seed, 0xF01D);
  std::size_t pointer = 0;
  for (int label : {0, 1}) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < cohort.size(); ++i) {
      if (cohort[i].label == label) members.push_back(i);
    }
    if (members.size() < static_cast<std::size_t>(n_folds)) {
      throw ConfigError("eval", "n_folds", "class " + std::to_string(label) + " has " + std::to_string(members.size()) +
                                               " members, fewer than " + std::to_string(n_folds) + " folds");
    }
    rng.shuffle(members.begin(), members.end());
    for (std::size_t i : members) {
      plan.folds[pointer].test.push_back(i);
      pointer = (pointer + 1) % static_cast<std::size_t>(n_folds);
    }
  }
  for (std::size_t f = 0; f < plan.folds.size(); ++f) {
    auto& fold = plan.folds[f];
    fold.index = static_cast<int>(f);
    std::sort(fold.test.begin(), fold.test.end());
    std::vector<bool> in_test(cohort.size(), false);
    for (std::size_t i : fold.test) in_test[i] = true;
    for (std::size_t i = 0; i < cohort.size(); ++i) {
      if (!in_test[i]) fold.train.push_back(i);
    }
  }
  return plan;
}

void assert_no_leakage(const Cohort& cohort, const Fold& fold, const std::vector<std::size_t>& ids,
                       const std::string& where) {
  std::unordered_set<std::string> test;
  for (std::size_t i : fold.test) test.insert(cohort[i].subject_id);
  for (std::size_t i : ids) {
    if (test.contains(cohort[i].subject_id)) throw LeakageError(cohort[i].subject_id, where);
  }
}

const char* to_string(Method m) {
  switch (m) {
    case Method::M3: return "M3";
    case Method::M3b: return "M3b";
    case Method::M4: return "M4";
    case Method::M5: return "M5";
    case Method::M6Style: return "M6-style";
    case Method::RandomEncoder: return "random-encoder";
    case Method::K1Retrieval: return "k1-retrieval";
    case Method::NoAgeFilter: return "no-age-filter";
  }
  return "?";
}

const char* describe(Method m) {
  switch (m) {
    case Method::M3: return "Siamese + logistic regression";
    case Method::M3b: return "Siamese + MLP";
    case Method::M4: return "Siamese + k-NN";
    case Method::M5: return "retrieval oracle (k-NN vote fused with verdict)";
    case Method::M6Style: return "M6-style soft-vote ensemble (k-NN, LR, MLP x2)";
    case Method::RandomEncoder: return "oracle on a Gaussian-initialized, untrained encoder";
    case Method::K1Retrieval: return "oracle with k = 1";
    case Method::NoAgeFilter: return "oracle without the age-gap filter";
  }
  return "?";
}

Method method_from_string(const std::string& s) {
  for (Method m : all_methods()) {
    if (s == to_string(m)) return m;
  }
  throw ConfigError("eval", "method", "unknown method '" + s + "'");
}

std::vector<Method> all_methods() {
  return {Method::M3, Method::M3b, Method::M4, Method::M5, Method::M6Style,
          Method::RandomEncoder, Method::K1Retrieval, Method::NoAgeFilter};
}

bool uses_oracle(Method m) {
  return m == Method::M5 || m == Method::RandomEncoder || m == Method::K1Retrieval || m == Method::NoAgeFilter;
}

void EvalConfig::validate() const {
  if (n_folds < 2) throw ConfigError("eval", "n_folds", "must be >= 2");
  if (threads < 1) throw ConfigError("eval", "threads", "must be >= 1");
  if (methods.empty()) throw ConfigError("eval", "methods", "at least one method is required");
  encoder.validate();
  oracle.validate();
}

json to_json(const EvalConfig& c) {
  json methods = json::array();
  for (Method m : c.methods) methods.push_back(to_string(m));
  return {{"n_folds", c.n_folds},
          {"seed", c.seed},
          {"methods", methods},
          {"encoder", to_json(c.encoder)},
          {"oracle", to_json(c.oracle)},
          {"mlp", to_json(c.mlp)},
          {"logistic",
           {{"C", c.logistic.c}, {"max_iterations", c.logistic.max_iterations}, {"tolerance", c.logistic.tolerance}}}};
}

void merge_json(const json& j, EvalConfig& c) {
  StrictObject o(j, "eval");
  o.read("n_folds", c.n_folds);
  o.read("seed", c.seed);
  if (o.has("methods")) {
    std::vector<std::string> names;
    o.read("methods", names);
    c.methods.clear();
    for (const auto& n : names) c.methods.push_back(method_from_string(n));
  }
  if (o.has("encoder")) merge_json(o.raw("encoder"), c.encoder, "encoder");
  if (o.has("oracle")) merge_json(o.raw("oracle"), c.oracle, "oracle");
  if (o.has("mlp")) merge_json(o.raw("mlp"), c.mlp, "mlp");
  if (o.has("logistic")) {
    StrictObject l(o.raw("logistic"), "logistic");
    l.read("C", c.logistic.c);
    l.read("max_iterations", c.logistic.max_iterations);
    l.read("tolerance", c.logistic.tolerance);
    l.finish();
  }
  o.finish();
}

std::uint64_t fold_encoder_seed(std::uint64_t seed, int fold) {
  return derive_seed(seed, 0xF0 + static_cast<std::uint64_t>(fold));
}

EmbeddedFolds embed_folds(const Cohort& cohort, const FoldPlan& plan, const EncoderConfig& cfg, bool train,
                          int threads, const ProgressFn& progress) {
  EmbeddedFolds out;
  out.plan = plan;
  out.trained = train;
  out.folds.resize(plan.folds.size());
  std::mutex log_mutex;
  parallel_for(plan.folds.size(), threads, [&](std::size_t f) {
    const Fold& fold = plan.folds[f];
    EncoderConfig fc = cfg;
    fc.seed = fold_encoder_seed(cfg.seed, fold.index);
    FoldEmbedding& fe = out.folds[f];
    fe.fold = fold.index;
    SiameseEncoder encoder;
    if (train) {
      std::unordered_set<std::string> heldout;
      for (std::size_t i : fold.test) heldout.insert(cohort[i].subject_id);
      Cohort subjects;
      subjects.reserve(fold.train.size());
      for (std::size_t i : fold.train) subjects.push_back(cohort[i]);
      TrainResult r = train_encoder(subjects, fc, heldout);
      encoder = std::move(r.encoder);
      fe.best_epoch = r.best_epoch;
      if (r.best_epoch > 0) fe.best_val_loss = r.history[static_cast<std::size_t>(r.best_epoch - 1)].val_loss;
    } else {
      assert_no_leakage(cohort, fold, fold.train, "random encoder");
      encoder = SiameseEncoder::initialize(fc, fc.seed);
    }
    fe.train_z = encode(encoder, cohort, fold.train);
    fe.test_z = encode(encoder, cohort, fold.test);
    if (progress) {
      std::lock_guard lock(log_mutex);
      progress("fold " + std::to_string(fold.index + 1) + "/" + std::to_string(plan.folds.size()) +
               (train ? " trained, best epoch " + std::to_string(fe.best_epoch) : " embedded with random encoder"));
    }
  });
  return out;
}

MethodResult evaluate_method(const Cohort& cohort, const EmbeddedFolds& embedded, Method method,
                             const EvalConfig& cfg, const VerdictProvider& provider) {
  if (method == Method::RandomEncoder && embedded.trained) {
    throw ConfigError("eval", "method", "random-encoder needs untrained fold embeddings");
  }
  if (method != Method::RandomEncoder && !embedded.trained) {
    throw ConfigError("eval", "method", std::string(to_string(method)) + " needs trained fold embeddings");
  }
  const OracleConfig ocfg = oracle_for(method, cfg.oracle);
  ocfg.validate();
  const std::size_t n_folds = embedded.plan.folds.size();

  struct FoldOut {
    std::vector<double> scores;
    std::vector<int> predicted;
    std::vector<OracleVerdict> verdicts;
  };
  std::vector<FoldOut> outs(n_folds);
  const int threads = provider.thread_safe() ? cfg.threads : 1;
  parallel_for(n_folds, threads, [&](std::size_t f) {
    const Fold& fold = embedded.plan.folds[f];
    const FoldEmbedding& fe = embedded.folds[f];
    assert_no_leakage(cohort, fold, fold.train, std::string(to_string(method)) + " training set");
    FoldOut& o = outs[f];
    if (uses_oracle(method)) {
      std::vector<ArchiveEntry> entries;
      entries.reserve(fold.train.size());
      for (std::size_t r = 0; r < fold.train.size(); ++r) {
        const SubjectRecord& s = cohort[fold.train[r]];
        entries.push_back({s.subject_id, fe.train_z.row(static_cast<Eigen::Index>(r)).transpose(), s.label, s.age, s.sex});
      }
      const PopulationArchive archive = PopulationArchive::build(std::move(entries));
      for (std::size_t r = 0; r < fold.test.size(); ++r) {
        const SubjectRecord& s = cohort[fold.test[r]];
        OracleQuery q{{s.subject_id, s.age, s.sex}, fe.test_z.row(static_cast<Eigen::Index>(r)).transpose()};
        OracleVerdict v = predict(q, archive, provider, ocfg);
        o.scores.push_back(v.p_q);
        o.predicted.push_back(v.predicted_label);
        o.verdicts.push_back(std::move(v));
      }
    } else {
      auto model = make_classifier(method, cfg);
      const std::vector<int> y = labels_of(cohort, fold.train);
      model->fit(fe.train_z, y);
      const Eigen::VectorXd p = model->predict_proba(fe.test_z);
      for (Eigen::Index r = 0; r < p.size(); ++r) {
        o.scores.push_back(p[r]);
        o.predicted.push_back(p[r] > ocfg.threshold ? 1 : 0);
      }
    }
  });

  MethodResult res;
  res.method = method;
  res.predictions.resize(cohort.size());
  std::vector<bool> seen(cohort.size(), false);
  std::vector<std::optional<OracleVerdict>> verdicts(cohort.size());
  for (std::size_t f = 0; f < n_folds; ++f) {
    const Fold& fold = embedded.plan.folds[f];
    std::vector<int> fold_labels = labels_of(cohort, fold.test);
    res.per_fold.push_back(classification_metrics(outs[f].scores, fold_labels, ocfg.threshold));
    for (std::size_t r = 0; r < fold.test.size(); ++r) {
      const std::size_t i = fold.test[r];
      if (seen[i]) throw ConfigError("eval", "fold plan", cohort[i].subject_id + " is tested in more than one fold");
      seen[i] = true;
      res.predictions[i] = {cohort[i].subject_id, fold.index, cohort[i].label, outs[f].scores[r], outs[f].predicted[r]};
      if (!outs[f].verdicts.empty()) verdicts[i] = std::move(outs[f].verdicts[r]);
    }
  }
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    if (!seen[i]) throw ConfigError("eval", "fold plan", cohort[i].subject_id + " is never tested");
  }

  std::vector<double> scores;
  std::vector<int> labels;
  for (const auto& p : res.predictions) {
    scores.push_back(p.score);
    labels.push_back(p.label);
  }
  res.aggregate = classification_metrics(scores, labels, ocfg.threshold);
  res.sweep = threshold_sweep(scores, labels);
  res.roc = roc_curve(scores, labels);

  if (uses_oracle(method)) {
    std::vector<RetrievalResult> results;
    AuditSummary audit;
    for (auto& v : verdicts) {
      results.push_back(v->retrieval);
      res.verdicts.push_back(std::move(*v));
      const OracleVerdict& ov = res.verdicts.back();
      const AuditFlags flags = audit_justification(ov.justification, ov.prompt);
      ++audit.responses;
      audit.hallucinations += flags.hallucination ? 1 : 0;
      audit.adherent += flags.age_filter_adherent ? 1 : 0;
      audit.unparseable += ov.token == VerdictToken::Unparseable ? 1 : 0;
    }
    res.retrieval = retrieval_quality(results, labels, scores);
    res.audit = audit;
  }
  return res;
}

std::vector<double> default_weight_grid() {
  std::vector<double> g;
  for (int i = 0; i <= 10; ++i) g.push_back(i / 10.0);
  return g;
}

std::vector<WeightRow> weight_sweep(const MethodResult& oracle_result, const Cohort& cohort,
                                    const OracleConfig& base, const std::vector<double>& grid) {
  if (oracle_result.verdicts.size() != cohort.size()) {
    throw ConfigError("eval", "weight sweep", "needs cached oracle verdicts for every subject");
  }
  std::vector<WeightRow> rows;
  std::vector<int> labels;
  for (const auto& s : cohort) labels.push_back(s.label);
  for (double w : grid) {
    OracleConfig c = base;
    c.neighbor_weight = w;
    c.validate();
    std::vector<double> p;
    double mae = 0.0;
    for (std::size_t i = 0; i < cohort.size(); ++i) {
      const auto& v = oracle_result.verdicts[i];
      p.push_back(fuse(v.p_neighbor, v.p_llm, c).p_q);
      mae += std::abs(p.back() - labels[i]);
    }
    const MetricSet m = classification_metrics(p, labels, c.threshold);
    rows.push_back({w, mae / static_cast<double>(cohort.size()), m.auc, m.balanced_accuracy});
  }
  return rows;
}

std::string cohort_digest(const Cohort& cohort) {
  std::uint64_t h = io::fnv1a("");
  auto mix = [&](const void* p, std::size_t n) { h = io::fnv1a(std::string_view(static_cast<const char*>(p), n), h); };
  for (const auto& s : cohort) {
    mix(s.subject_id.data(), s.subject_id.size());
    mix(&s.label, sizeof(s.label));
    mix(&s.age, sizeof(s.age));
    const int sex = s.sex == Sex::M ? 0 : 1;
    mix(&sex, sizeof(sex));
    mix(s.pre_volume.voxels.data(), sizeof(double) * static_cast<std::size_t>(s.pre_volume.voxels.size()));
    mix(s.post_volume.voxels.data(), sizeof(double) * static_cast<std::size_t>(s.post_volume.voxels.size()));
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

EvalReport run_cv(const Cohort& cohort, const EvalConfig& cfg, const VerdictProvider& provider,
                  const std::vector<double>& weight_grid, const ProgressFn& progress) {
  cfg.validate();
  validate_cohort(cohort);
  const Cohort prepared = preprocess(cohort, cfg.encoder.volume_dim);
  const FoldPlan plan = stratified_kfold(prepared, cfg.n_folds, cfg.seed);

  EvalReport report;
  report.config = to_json(cfg);
  report.config["cohort"] = {{"subjects", cohort.size()}, {"digest", cohort_digest(cohort)}};

  bool need_trained = !weight_grid.empty();
  bool need_random = false;
  for (Method m : cfg.methods) (m == Method::RandomEncoder ? need_random : need_trained) = true;

  std::optional<EmbeddedFolds> trained, random;
  if (need_trained) trained = embed_folds(prepared, plan, cfg.encoder, true, cfg.threads, progress);
  if (need_random) random = embed_folds(prepared, plan, cfg.encoder, false, cfg.threads, progress);

  for (const Fold& fold : plan.folds) {
    FoldSummary s;
    s.fold = fold.index;
    s.n_train = fold.train.size();
    s.n_test = fold.test.size();
    for (std::size_t i : fold.test) s.n_test_positive += static_cast<std::size_t>(prepared[i].label);
    if (trained) {
      s.best_epoch = trained->folds[static_cast<std::size_t>(fold.index)].best_epoch;
      s.best_val_loss = trained->folds[static_cast<std::size_t>(fold.index)].best_val_loss;
    }
    report.folds.push_back(s);
  }

  std::optional<MethodResult> m5;
  for (Method m : cfg.methods) {
    const EmbeddedFolds& emb = m == Method::RandomEncoder ? *random : *trained;
    report.methods.push_back(evaluate_method(prepared, emb, m, cfg, provider));
    if (progress) {
      progress(std::string(to_string(m)) + " AUC " + std::to_string(report.methods.back().aggregate.auc));
    }
    if (m == Method::M5) m5 = report.methods.back();
  }
  if (!weight_grid.empty()) {
    if (!m5) m5 = evaluate_method(prepared, *trained, Method::M5, cfg, provider);
    report.weights = weight_sweep(*m5, prepared, cfg.oracle, weight_grid);
  }
  return report;
}

}  // namespace trajret
