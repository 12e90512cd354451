#include "trajret/report.hpp"

#include <cmath>
#include <sstream>

#include "trajret/binary_io.hpp"

namespace trajret {

using nlohmann::json;

namespace {

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

std::string fmt(double v) {
  if (!std::isfinite(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

json fold_mean(const std::vector<MetricSet>& folds) {
  double auc = 0, f1 = 0, sens = 0, spec = 0, bal = 0;
  for (const auto& m : folds) {
    auc += m.auc;
    f1 += m.f1;
    sens += m.sensitivity;
    spec += m.specificity;
    bal += m.balanced_accuracy;
  }
  const double n = folds.empty() ? 1.0 : static_cast<double>(folds.size());
  return {{"auc", auc / n}, {"f1", f1 / n}, {"sensitivity", sens / n}, {"specificity", spec / n},
          {"balanced_accuracy", bal / n}};
}

std::filesystem::path sibling(const std::filesystem::path& report, const std::string& suffix) {
  auto out = report;
  out.replace_extension();
  out += suffix;
  return out;
}

}  // namespace

json to_json(const MetricSet& m) {
  return {{"threshold", m.threshold},
          {"auc", m.auc},
          {"f1", m.f1},
          {"sensitivity", m.sensitivity},
          {"specificity", m.specificity},
          {"balanced_accuracy", m.balanced_accuracy},
          {"confusion", {{"tp", m.confusion.tp}, {"fp", m.confusion.fp}, {"tn", m.confusion.tn}, {"fn", m.confusion.fn}}}};
}

json to_json(const MethodResult& r) {
  json j = {{"method", to_string(r.method)}, {"description", describe(r.method)}};
  j["aggregate"] = to_json(r.aggregate);
  j["optimized"] = to_json(r.sweep.best());
  json per_fold = json::array();
  for (const auto& m : r.per_fold) per_fold.push_back(to_json(m));
  j["per_fold"] = per_fold;
  j["per_fold_mean"] = fold_mean(r.per_fold);
  json sweep = json::array();
  for (const auto& m : r.sweep.rows) sweep.push_back(to_json(m));
  j["threshold_sweep"] = sweep;
  json roc = json::array();
  for (const auto& p : r.roc) roc.push_back({{"threshold", number_or_null(p.threshold)}, {"fpr", p.fpr}, {"tpr", p.tpr}});
  j["roc"] = roc;
  if (r.retrieval) {
    j["retrieval"] = {{"top_k_fidelity", r.retrieval->top_k_fidelity},
                      {"mean_cosine", r.retrieval->mean_cosine},
                      {"calibration_mae", r.retrieval->calibration_mae}};
  }
  if (r.audit) {
    j["audit"] = {{"responses", r.audit->responses},
                  {"hallucination_rate", r.audit->hallucination_rate()},
                  {"age_filter_adherence", r.audit->adherence_rate()},
                  {"unparseable", r.audit->unparseable}};
  }
  json preds = json::array();
  for (std::size_t i = 0; i < r.predictions.size(); ++i) {
    const auto& p = r.predictions[i];
    json row = {{"subject_id", p.subject_id}, {"fold", p.fold}, {"label", p.label}, {"score", p.score},
                {"predicted", p.predicted}};
    if (!r.verdicts.empty()) {
      const auto& v = r.verdicts[i];
      row["token"] = to_string(v.token);
      row["p_neighbor"] = v.p_neighbor;
      row["p_llm"] = v.p_llm;
      row["justification"] = v.justification;
      json ids = json::array();
      for (const auto& n : v.retrieval.neighbors) ids.push_back(n.subject_id);
      row["neighbors"] = ids;
    }
    preds.push_back(row);
  }
  j["predictions"] = preds;
  return j;
}

json to_json(const EvalReport& r) {
  json folds = json::array();
  for (const auto& f : r.folds) {
    folds.push_back({{"fold", f.fold},
                     {"n_train", f.n_train},
                     {"n_test", f.n_test},
                     {"n_test_positive", f.n_test_positive},
                     {"best_epoch", f.best_epoch},
                     {"best_val_loss", f.best_val_loss}});
  }
  json methods = json::array();
  for (const auto& m : r.methods) methods.push_back(to_json(m));
  json j = {{"format", "trajret-eval-report"},
            {"schema_version", kReportSchemaVersion},
            {"config", r.config},
            {"folds", folds},
            {"methods", methods}};
  if (!r.weights.empty()) {
    json rows = json::array();
    for (const auto& w : r.weights) {
      rows.push_back({{"neighbor_weight", w.neighbor_weight},
                      {"calibration_mae", w.calibration_mae},
                      {"auc", w.auc},
                      {"balanced_accuracy", w.balanced_accuracy}});
    }
    j["weight_sweep"] = rows;
  }
  return j;
}

void write_report(const std::filesystem::path& path, const EvalReport& report) {
  io::write_file_atomic(path.string(), to_json(report).dump(2) + "\n");
}

void write_report_tables(const std::filesystem::path& report_path, const EvalReport& report) {
  std::ostringstream roc, thr, abl;
  roc << "method,threshold,fpr,tpr\n";
  thr << "method,threshold,sensitivity,specificity,balanced_accuracy,f1,selected\n";
  abl << "method,auc,balanced_accuracy,sensitivity,specificity,f1,best_threshold,best_balanced_accuracy,"
         "top_k_fidelity,mean_cosine,calibration_mae\n";
  for (const auto& m : report.methods) {
    const std::string name = to_string(m.method);
    for (const auto& p : m.roc) roc << name << "," << fmt(p.threshold) << "," << fmt(p.fpr) << "," << fmt(p.tpr) << "\n";
    for (std::size_t i = 0; i < m.sweep.rows.size(); ++i) {
      const auto& r = m.sweep.rows[i];
      thr << name << "," << fmt(r.threshold) << "," << fmt(r.sensitivity) << "," << fmt(r.specificity) << ","
          << fmt(r.balanced_accuracy) << "," << fmt(r.f1) << "," << (i == m.sweep.best_index ? 1 : 0) << "\n";
    }
    const auto& a = m.aggregate;
    abl << name << "," << fmt(a.auc) << "," << fmt(a.balanced_accuracy) << "," << fmt(a.sensitivity) << ","
        << fmt(a.specificity) << "," << fmt(a.f1) << "," << fmt(m.sweep.best().threshold) << ","
        << fmt(m.sweep.best().balanced_accuracy);
    if (m.retrieval) {
      abl << "," << fmt(m.retrieval->top_k_fidelity) << "," << fmt(m.retrieval->mean_cosine) << ","
          << fmt(m.retrieval->calibration_mae) << "\n";
    } else {
      abl << ",,,\n";
    }
  }
  io::write_file_atomic(sibling(report_path, ".roc.csv").string(), roc.str());
  io::write_file_atomic(sibling(report_path, ".thresholds.csv").string(), thr.str());
  io::write_file_atomic(sibling(report_path, ".ablation.csv").string(), abl.str());
  if (!report.weights.empty()) {
    std::ostringstream w;
    w << "neighbor_weight,calibration_mae,auc,balanced_accuracy\n";
    for (const auto& r : report.weights) {
      w << fmt(r.neighbor_weight) << "," << fmt(r.calibration_mae) << "," << fmt(r.auc) << ","
        << fmt(r.balanced_accuracy) << "\n";
    }
    io::write_file_atomic(sibling(report_path, ".weights.csv").string(), w.str());
  }
}

}  // namespace trajret
