#include "trajret/classifiers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <nlohmann/json.hpp>
#include <numeric>

#include "trajret/error.hpp"
#include "trajret/losses.hpp"
#include "trajret/optimizer.hpp"
#include "trajret/random.hpp"

namespace trajret {

namespace {

using json = nlohmann::json;

void check_training_set(const Eigen::MatrixXd& x, std::span<const int> y, const std::string& who) {
  if (x.rows() == 0) throw ConfigError("classifiers", "train", who + " needs a nonempty training set");
  if (static_cast<std::size_t>(x.rows()) != y.size()) {
    throw ShapeError("classifiers", who + ": " + std::to_string(x.rows()) + " rows but " + std::to_string(y.size()) + " labels");
  }
  for (int v : y) {
    if (v != 0 && v != 1) throw ConfigError("classifiers", "label", "must be 0 or 1");
  }
  if (!x.allFinite()) throw NumericError("classifiers", who + ": non-finite training input");
}

void require_fitted(bool fitted, const std::string& who) {
  if (!fitted) throw Error("classifiers", who + " used before fit()");
}

void require_cols(const Eigen::MatrixXd& x, Eigen::Index cols, const std::string& who) {
  if (x.cols() != cols) {
    throw ShapeError("classifiers", who + ": expected " + std::to_string(cols) + " features, got " + std::to_string(x.cols()));
  }
}

Eigen::MatrixXd unit_rows(const Eigen::MatrixXd& x) {
  Eigen::MatrixXd out = x;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double n = out.row(i).norm();
    if (!(n > 0.0)) throw NumericError("classifiers", "cosine k-NN got a zero-norm row");
    out.row(i) /= n;
  }
  return out;
}

double sigmoid(double t) {
  if (t >= 0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

// log(1 + exp(t)) without overflow.
double softplus(double t) { return t > 0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t)); }

ad::Checkpoint make_ckpt(const json& cfg, std::vector<ad::NamedTensor> tensors) {
  return {cfg.dump(), std::move(tensors)};
}

json parse_cfg(const ad::Checkpoint& ckpt, const std::string& expect) {
  json cfg;
  try {
    cfg = json::parse(ckpt.config_json);
  } catch (const json::exception& e) {
    throw ParseError("classifiers", std::string("snapshot config: ") + e.what());
  }
  if (!cfg.is_object() || cfg.value("model", "") != expect) {
    throw ParseError("classifiers", "snapshot is not a " + expect + " model");
  }
  return cfg;
}

}  // namespace

int knn_k(std::size_t n_train, int max_k) {
  const auto half = static_cast<long long>(n_train / 2);
  return static_cast<int>(std::max<long long>(1, std::min<long long>(max_k, half)));
}

void KnnClassifier::fit(const Eigen::MatrixXd& x, std::span<const int> y) {
  check_training_set(x, y, "knn");
  train_ = unit_rows(x);
  labels_.resize(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) labels_[i] = y[static_cast<std::size_t>(i)];
  k_ = fixed_k_ > 0 ? std::min<int>(fixed_k_, static_cast<int>(x.rows())) : knn_k(static_cast<std::size_t>(x.rows()), max_k_);
}

Eigen::VectorXd KnnClassifier::predict_proba(const Eigen::MatrixXd& x) const {
  require_fitted(fitted(), "knn");
  require_cols(x, train_.cols(), "knn");
  const Eigen::MatrixXd sims = unit_rows(x) * train_.transpose();
  Eigen::VectorXd out(x.rows());
  std::vector<Eigen::Index> order(static_cast<std::size_t>(train_.rows()));
  for (Eigen::Index q = 0; q < x.rows(); ++q) {
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + k_, order.end(), [&](Eigen::Index a, Eigen::Index b) {
      return sims(q, a) > sims(q, b) || (sims(q, a) == sims(q, b) && a < b);
    });
    int positives = 0;
    for (int j = 0; j < k_; ++j) positives += static_cast<int>(labels_[order[static_cast<std::size_t>(j)]]);
    out[q] = static_cast<double>(positives) / k_;
  }
  return out;
}

ad::Checkpoint KnnClassifier::snapshot() const {
  require_fitted(fitted(), "knn");
  return make_ckpt({{"model", "knn"}, {"k", k_}, {"max_k", max_k_}, {"fixed_k", fixed_k_}},
                   {{"train", train_}, {"labels", labels_}});
}

KnnClassifier KnnClassifier::restore(const ad::Checkpoint& ckpt) {
  const json cfg = parse_cfg(ckpt, "knn");
  KnnClassifier m(cfg.at("max_k").get<int>(), cfg.at("fixed_k").get<int>());
  m.train_ = ckpt.at("train");
  m.labels_ = ckpt.at("labels");
  m.k_ = cfg.at("k").get<int>();
  if (m.k_ < 1 || m.k_ > m.train_.rows() || m.labels_.size() != m.train_.rows()) {
    throw ParseError("classifiers", "inconsistent knn snapshot");
  }
  return m;
}

Eigen::VectorXd balanced_weights(std::span<const int> y, const std::string& module) {
  const auto n = static_cast<double>(y.size());
  const auto n1 = static_cast<double>(std::count(y.begin(), y.end(), 1));
  const double n0 = n - n1;
  if (n0 == 0 || n1 == 0) throw ConfigError(module, "train", "both classes must be present");
  Eigen::VectorXd s(static_cast<Eigen::Index>(y.size()));
  for (std::size_t i = 0; i < y.size(); ++i) s[static_cast<Eigen::Index>(i)] = n / (2.0 * (y[i] == 1 ? n1 : n0));
  return s;
}

double LogisticRegression::objective(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const Eigen::VectorXd& s,
                                     const Eigen::VectorXd& w, double b, double c, Eigen::VectorXd* grad_w,
                                     double* grad_b) {
  const Eigen::VectorXd t = (x * w).array() + b;
  const double n = static_cast<double>(x.rows());
  double loss = 0.0;
  Eigen::VectorXd r(t.size());
  for (Eigen::Index i = 0; i < t.size(); ++i) {
    // nll = softplus(t) - y t
    loss += s[i] * (softplus(t[i]) - y[i] * t[i]);
    r[i] = s[i] * (sigmoid(t[i]) - y[i]) / n;
  }
  loss = loss / n + w.squaredNorm() / (2.0 * c);
  if (grad_w != nullptr) *grad_w = x.transpose() * r + w / c;
  if (grad_b != nullptr) *grad_b = r.sum();
  return loss;
}

void LogisticRegression::fit(const Eigen::MatrixXd& x, std::span<const int> y) {
  check_training_set(x, y, "logistic_regression");
  if (!(cfg_.c > 0.0)) throw ConfigError("classifiers", "C", "must be > 0");
  const Eigen::VectorXd s = balanced_weights(y, "classifiers");
  Eigen::VectorXd yy(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) yy[i] = y[static_cast<std::size_t>(i)];

  Eigen::VectorXd w = Eigen::VectorXd::Zero(x.cols());
  double b = 0.0;
  Eigen::VectorXd gw;
  double gb = 0.0;
  double f = objective(x, yy, s, w, b, cfg_.c, &gw, &gb);
  double step = 1.0;
  int it = 0;
  for (; it < cfg_.max_iterations; ++it) {
    const double gnorm2 = gw.squaredNorm() + gb * gb;
    if (std::sqrt(gnorm2) < cfg_.tolerance) break;
    // Armijo backtracking from a step that grows after each success.
    Eigen::VectorXd w_new;
    double b_new = 0.0;
    double f_new = 0.0;
    for (int tries = 0;; ++tries) {
      w_new = w - step * gw;
      b_new = b - step * gb;
      f_new = objective(x, yy, s, w_new, b_new, cfg_.c, nullptr, nullptr);
      if (f_new <= f - 0.5 * step * gnorm2 || tries == 60) break;
      step *= 0.5;
    }
    w = std::move(w_new);
    b = b_new;
    f = objective(x, yy, s, w, b, cfg_.c, &gw, &gb);
    step *= 2.0;
  }
  w_ = std::move(w);
  b_ = b;
  iterations_ = it;
  fitted_ = true;
}

double LogisticRegression::gradient_norm(const Eigen::MatrixXd& x, std::span<const int> y) const {
  require_fitted(fitted_, "logistic_regression");
  const Eigen::VectorXd s = balanced_weights(y, "classifiers");
  Eigen::VectorXd yy(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) yy[i] = y[static_cast<std::size_t>(i)];
  Eigen::VectorXd gw;
  double gb = 0.0;
  objective(x, yy, s, w_, b_, cfg_.c, &gw, &gb);
  return std::sqrt(gw.squaredNorm() + gb * gb);
}

Eigen::VectorXd LogisticRegression::predict_proba(const Eigen::MatrixXd& x) const {
  require_fitted(fitted_, "logistic_regression");
  require_cols(x, w_.size(), "logistic_regression");
  const Eigen::VectorXd t = (x * w_).array() + b_;
  return t.unaryExpr([](double v) { return sigmoid(v); });
}

ad::Checkpoint LogisticRegression::snapshot() const {
  require_fitted(fitted_, "logistic_regression");
  return make_ckpt({{"model", "logistic_regression"},
                    {"C", cfg_.c},
                    {"max_iterations", cfg_.max_iterations},
                    {"tolerance", cfg_.tolerance},
                    {"iterations", iterations_}},
                   {{"weights", w_}, {"bias", ad::Matrix::Constant(1, 1, b_)}});
}

LogisticRegression LogisticRegression::restore(const ad::Checkpoint& ckpt) {
  const json cfg = parse_cfg(ckpt, "logistic_regression");
  LogisticRegression m({cfg.at("C").get<double>(), cfg.at("max_iterations").get<int>(), cfg.at("tolerance").get<double>()});
  const ad::Matrix& w = ckpt.at("weights");
  const ad::Matrix& b = ckpt.at("bias");
  if (w.cols() != 1 || b.size() != 1) throw ParseError("classifiers", "inconsistent logistic_regression snapshot");
  m.w_ = w.col(0);
  m.b_ = b(0, 0);
  m.iterations_ = cfg.at("iterations").get<int>();
  m.fitted_ = true;
  return m;
}

Eigen::VectorXd MlpClassifier::logits(const Eigen::MatrixXd& x) const {
  ad::Matrix h = x;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    h = (h * weights_[l].value).rowwise() + biases_[l].value.row(0);
    if (l + 1 < weights_.size()) h = h.cwiseMax(0.0);
  }
  return h.col(0);
}

void MlpClassifier::fit(const Eigen::MatrixXd& x, std::span<const int> y) {
  check_training_set(x, y, "mlp");
  const Eigen::VectorXd all_weights = balanced_weights(y, "classifiers");
  if (cfg_.alpha < 0.0) throw ConfigError("classifiers", "alpha", "must be >= 0");
  if (cfg_.max_epochs < 0 || cfg_.patience < 1 || cfg_.batch_size < 1) {
    throw ConfigError("classifiers", "mlp schedule", "need max_epochs >= 0, patience >= 1, batch_size >= 1");
  }

  // Glorot-uniform weights and zero biases.
  Rng rng = Rng::stream(cfg_.seed, 0x31F);
  weights_.clear();
  biases_.clear();
  std::vector<int> widths{static_cast<int>(x.cols())};
  widths.insert(widths.end(), cfg_.hidden.begin(), cfg_.hidden.end());
  widths.push_back(1);
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const double bound = std::sqrt(6.0 / (widths[l] + widths[l + 1]));
    ad::Matrix w(widths[l], widths[l + 1]);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-bound, bound);
    weights_.emplace_back("mlp.w" + std::to_string(l), std::move(w));
    biases_.emplace_back("mlp.b" + std::to_string(l), ad::Matrix::Zero(1, widths[l + 1]));
  }
  fitted_ = true;
  epochs_run_ = 0;
  best_epoch_ = 0;
  best_val_accuracy_ = 0.0;

  // Stratified validation split; skipped when a class is too small to spare one.
  std::vector<Eigen::Index> train_idx, val_idx;
  for (int label : {0, 1}) {
    std::vector<Eigen::Index> members;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      if (y[static_cast<std::size_t>(i)] == label) members.push_back(i);
    }
    rng.shuffle(members.begin(), members.end());
    auto n_val = static_cast<std::size_t>(std::lround(cfg_.validation_fraction * static_cast<double>(members.size())));
    n_val = std::max<std::size_t>(n_val, cfg_.validation_fraction > 0.0 ? 1 : 0);
    if (members.size() < 2) n_val = 0;
    n_val = std::min(n_val, members.size() - 1);
    val_idx.insert(val_idx.end(), members.begin(), members.begin() + static_cast<long>(n_val));
    train_idx.insert(train_idx.end(), members.begin() + static_cast<long>(n_val), members.end());
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(val_idx.begin(), val_idx.end());
  const bool early_stopping = !val_idx.empty();

  std::vector<int> y_val;
  for (auto i : val_idx) y_val.push_back(y[static_cast<std::size_t>(i)]);
  const Eigen::MatrixXd x_val = x(val_idx, Eigen::all);
  const Eigen::VectorXd w_val = all_weights(val_idx);

  auto val_stats = [&](double* accuracy) {
    const Eigen::VectorXd t = logits(x_val);
    double loss = 0.0, wsum = 0.0, weighted_correct = 0.0;
    for (Eigen::Index i = 0; i < t.size(); ++i) {
      const int yi = y_val[static_cast<std::size_t>(i)];
      loss += w_val[i] * (softplus(t[i]) - yi * t[i]);
      wsum += w_val[i];
      weighted_correct += w_val[i] * (((t[i] > 0.0) ? 1 : 0) == yi ? 1.0 : 0.0);
    }
    *accuracy = weighted_correct / wsum;
    return loss / wsum;
  };

  ad::OptimizerConfig opt;
  opt.learning_rate = cfg_.learning_rate;
  opt.weight_decay = 0.0;
  std::vector<ad::Parameter*> params;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    params.push_back(&weights_[l]);
    params.push_back(&biases_[l]);
  }
  for (auto* p : params) p->grad = ad::Matrix::Zero(p->value.rows(), p->value.cols());

  double best_loss = std::numeric_limits<double>::infinity();
  std::vector<ad::Matrix> best_values;
  if (early_stopping) {
    best_loss = val_stats(&best_val_accuracy_);
    for (auto* p : params) best_values.push_back(p->value);
  }
  int since_best = 0;

  for (int epoch = 1; epoch <= cfg_.max_epochs; ++epoch) {
    std::vector<Eigen::Index> order = train_idx;
    rng.shuffle(order.begin(), order.end());
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg_.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg_.batch_size));
      std::vector<Eigen::Index> rows(order.begin() + static_cast<long>(start), order.begin() + static_cast<long>(stop));
      std::vector<int> yb;
      std::vector<double> sb;
      for (auto i : rows) {
        yb.push_back(y[static_cast<std::size_t>(i)]);
        sb.push_back(all_weights[i]);
      }
      ad::Graph g;
      ad::Var h = g.constant(x(rows, Eigen::all));
      ad::Var penalty;
      for (std::size_t l = 0; l < weights_.size(); ++l) {
        ad::Var w = g.param(weights_[l]);
        h = ad::dense(h, w, g.param(biases_[l]));
        if (l + 1 < weights_.size()) h = ad::relu(h);
        ad::Var sq = ad::sum(ad::mul(w, w));
        penalty = l == 0 ? sq : ad::add(penalty, sq);
      }
      ad::Var loss = weighted_bce(h, yb, sb);
      if (cfg_.alpha > 0.0) loss = ad::add(loss, ad::scale(penalty, cfg_.alpha / (2.0 * static_cast<double>(rows.size()))));
      g.backward(loss);
      ad::adamw_update(params, opt, opt.learning_rate);
      for (auto* p : params) p->zero_grad();
    }
    epochs_run_ = epoch;
    if (!early_stopping) continue;
    double acc = 0.0;
    const double vloss = val_stats(&acc);
    if (vloss < best_loss) {
      best_loss = vloss;
      best_epoch_ = epoch;
      best_val_accuracy_ = acc;
      for (std::size_t i = 0; i < params.size(); ++i) best_values[i] = params[i]->value;
      since_best = 0;
    } else if (++since_best >= cfg_.patience) {
      break;
    }
  }
  if (early_stopping) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = best_values[i];
  }
  for (auto* p : params) {
    p->grad.resize(0, 0);
    p->first_moment.resize(0, 0);
    p->second_moment.resize(0, 0);
    p->steps = 0;
  }
}

Eigen::VectorXd MlpClassifier::predict_proba(const Eigen::MatrixXd& x) const {
  require_fitted(fitted_, "mlp");
  require_cols(x, weights_.front().value.rows(), "mlp");
  return logits(x).unaryExpr([](double v) { return sigmoid(v); });
}

ad::Checkpoint MlpClassifier::snapshot() const {
  require_fitted(fitted_, "mlp");
  std::vector<ad::NamedTensor> tensors;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    tensors.push_back({weights_[l].name, weights_[l].value});
    tensors.push_back({biases_[l].name, biases_[l].value});
  }
  return make_ckpt({{"model", "mlp"},
                    {"hidden", cfg_.hidden},
                    {"alpha", cfg_.alpha},
                    {"learning_rate", cfg_.learning_rate},
                    {"batch_size", cfg_.batch_size},
                    {"max_epochs", cfg_.max_epochs},
                    {"patience", cfg_.patience},
                    {"validation_fraction", cfg_.validation_fraction},
                    {"seed", cfg_.seed},
                    {"epochs_run", epochs_run_},
                    {"best_epoch", best_epoch_}},
                   std::move(tensors));
}

MlpClassifier MlpClassifier::restore(const ad::Checkpoint& ckpt) {
  const json cfg = parse_cfg(ckpt, "mlp");
  MlpConfig mc;
  mc.hidden = cfg.at("hidden").get<std::vector<int>>();
  mc.alpha = cfg.at("alpha").get<double>();
  mc.learning_rate = cfg.at("learning_rate").get<double>();
  mc.batch_size = cfg.at("batch_size").get<int>();
  mc.max_epochs = cfg.at("max_epochs").get<int>();
  mc.patience = cfg.at("patience").get<int>();
  mc.validation_fraction = cfg.at("validation_fraction").get<double>();
  mc.seed = cfg.at("seed").get<std::uint64_t>();
  MlpClassifier m(mc);
  for (std::size_t l = 0; l <= mc.hidden.size(); ++l) {
    const std::string w = "mlp.w" + std::to_string(l), b = "mlp.b" + std::to_string(l);
    m.weights_.emplace_back(w, ckpt.at(w));
    m.biases_.emplace_back(b, ckpt.at(b));
    if (m.biases_.back().value.rows() != 1 || m.biases_.back().value.cols() != m.weights_.back().value.cols() ||
        (l > 0 && m.weights_[l - 1].value.cols() != m.weights_[l].value.rows())) {
      throw ParseError("classifiers", "inconsistent mlp snapshot");
    }
  }
  if (m.weights_.back().value.cols() != 1) throw ParseError("classifiers", "inconsistent mlp snapshot");
  m.epochs_run_ = cfg.at("epochs_run").get<int>();
  m.best_epoch_ = cfg.at("best_epoch").get<int>();
  m.fitted_ = true;
  return m;
}

SoftVoteEnsemble::SoftVoteEnsemble(std::vector<std::unique_ptr<ClassifierModel>> members)
    : members_(std::move(members)) {
  if (members_.size() < 2) throw ConfigError("classifiers", "members", "a soft-vote ensemble needs at least 2 members");
  for (const auto& m : members_) {
    if (!m) throw ConfigError("classifiers", "members", "null member");
  }
}

SoftVoteEnsemble SoftVoteEnsemble::default_members() {
  std::vector<std::unique_ptr<ClassifierModel>> m;
  m.push_back(std::make_unique<KnnClassifier>());
  m.push_back(std::make_unique<LogisticRegression>());
  MlpConfig a;
  a.seed = 99;
  MlpConfig b;
  b.seed = 123;
  m.push_back(std::make_unique<MlpClassifier>(a));
  m.push_back(std::make_unique<MlpClassifier>(b));
  return SoftVoteEnsemble(std::move(m));
}

void SoftVoteEnsemble::fit(const Eigen::MatrixXd& x, std::span<const int> y) {
  for (auto& m : members_) m->fit(x, y);
}

bool SoftVoteEnsemble::fitted() const {
  return std::all_of(members_.begin(), members_.end(), [](const auto& m) { return m->fitted(); });
}

Eigen::VectorXd SoftVoteEnsemble::predict_proba(const Eigen::MatrixXd& x) const {
  for (const auto& m : members_) require_fitted(m->fitted(), "soft_vote member " + m->name());
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(x.rows());
  for (const auto& m : members_) acc += m->predict_proba(x);
  return acc / static_cast<double>(members_.size());
}

ad::Checkpoint SoftVoteEnsemble::snapshot() const {
  json cfg = {{"model", "soft_vote"}, {"members", json::array()}};
  std::vector<ad::NamedTensor> tensors;
  for (std::size_t i = 0; i < members_.size(); ++i) {
    const ad::Checkpoint sub = members_[i]->snapshot();
    cfg["members"].push_back(json::parse(sub.config_json));
    for (const auto& t : sub.tensors) tensors.push_back({"m" + std::to_string(i) + "/" + t.name, t.value});
  }
  return make_ckpt(cfg, std::move(tensors));
}

std::unique_ptr<ClassifierModel> restore_classifier(const ad::Checkpoint& ckpt) {
  json cfg;
  try {
    cfg = json::parse(ckpt.config_json);
  } catch (const json::exception& e) {
    throw ParseError("classifiers", std::string("snapshot config: ") + e.what());
  }
  const std::string model = cfg.is_object() ? cfg.value("model", "") : "";
  try {
    if (model == "knn") return std::make_unique<KnnClassifier>(KnnClassifier::restore(ckpt));
    if (model == "logistic_regression") return std::make_unique<LogisticRegression>(LogisticRegression::restore(ckpt));
    if (model == "mlp") return std::make_unique<MlpClassifier>(MlpClassifier::restore(ckpt));
    if (model == "soft_vote") {
      std::vector<std::unique_ptr<ClassifierModel>> members;
      const auto& list = cfg.at("members");
      for (std::size_t i = 0; i < list.size(); ++i) {
        ad::Checkpoint sub{list[i].dump(), {}};
        const std::string prefix = "m" + std::to_string(i) + "/";
        for (const auto& t : ckpt.tensors) {
          if (t.name.rfind(prefix, 0) == 0) sub.tensors.push_back({t.name.substr(prefix.size()), t.value});
        }
        members.push_back(restore_classifier(sub));
      }
      return std::make_unique<SoftVoteEnsemble>(std::move(members));
    }
  } catch (const json::exception& e) {
    throw ParseError("classifiers", std::string("snapshot config: ") + e.what());
  }
  throw ParseError("classifiers", "unknown model type '" + model + "'");
}

void save_classifier(const std::string& path, const ClassifierModel& model) { ad::save_checkpoint(path, model.snapshot()); }

std::unique_ptr<ClassifierModel> load_classifier(const std::string& path) {
  return restore_classifier(ad::load_checkpoint(path));
}

}  // namespace trajret
