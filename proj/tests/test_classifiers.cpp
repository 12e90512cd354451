#include <doctest.h>

#include <set>

#include "support.hpp"
#include "trajret/classifiers.hpp"
#include "trajret/error.hpp"

using namespace trajret;

namespace {

// Two Gaussian blobs on opposite sides of the first axis.
struct Blobs {
  Eigen::MatrixXd x;
  std::vector<int> y;
};

Blobs blobs(int n, int dim, double gap, Rng& rng) {
  Blobs b{Eigen::MatrixXd(n, dim), std::vector<int>(static_cast<std::size_t>(n))};
  for (int i = 0; i < n; ++i) {
    const int label = i % 3 == 0 ? 1 : 0;
    b.y[static_cast<std::size_t>(i)] = label;
    for (int d = 0; d < dim; ++d) b.x(i, d) = rng.normal(0.0, 0.3);
    b.x(i, 0) += label ? gap : -gap;
    b.x(i, 1) += 1.0;  // keeps rows away from the origin for the cosine k-NN
  }
  return b;
}

MlpConfig small_mlp(std::uint64_t seed) {
  MlpConfig c;
  c.hidden = {16, 8};
  c.max_epochs = 60;
  c.batch_size = 32;
  c.learning_rate = 1e-2;
  c.seed = seed;
  return c;
}

// Constant-probability stand-in for ensemble arithmetic.
class Fixed final : public ClassifierModel {
 public:
  explicit Fixed(double p, bool fitted = true) : p_(p), fitted_(fitted) {}
  void fit(const Eigen::MatrixXd&, std::span<const int>) override { fitted_ = true; }
  Eigen::VectorXd predict_proba(const Eigen::MatrixXd& x) const override {
    if (!fitted_) throw Error("classifiers", "fixed used before fit()");
    return Eigen::VectorXd::Constant(x.rows(), p_);
  }
  bool fitted() const override { return fitted_; }
  std::string name() const override { return "fixed"; }
  ad::Checkpoint snapshot() const override { return {}; }

 private:
  double p_;
  bool fitted_;
};

SoftVoteEnsemble fixed_ensemble(std::vector<double> ps) {
  std::vector<std::unique_ptr<ClassifierModel>> m;
  for (double p : ps) m.push_back(std::make_unique<Fixed>(p));
  return SoftVoteEnsemble(std::move(m));
}

}  // namespace

TEST_CASE("knn_k") {
  CHECK(knn_k(4) == 2);
  CHECK(knn_k(214) == 5);
  CHECK(knn_k(1) == 1);
  CHECK(knn_k(10) == 5);
  CHECK(knn_k(9) == 4);
  CHECK(knn_k(100, 7) == 7);
}

TEST_CASE("k-NN") {
  Rng rng(3);
  const Blobs b = blobs(40, 5, 1.0, rng);
  KnnClassifier knn;
  CHECK_FALSE(knn.fitted());
  CHECK_THROWS_AS(knn.predict_proba(b.x), Error);
  knn.fit(b.x, b.y);
  CHECK(knn.k() == 5);
  const Eigen::VectorXd p = knn.predict_proba(b.x);
  for (long i = 0; i < p.size(); ++i) {
    const double scaled = p[i] * 5;
    CHECK(std::abs(scaled - std::round(scaled)) < 1e-12);
  }
  KnnClassifier one(5, 1);
  one.fit(b.x, b.y);
  const Eigen::VectorXd self = one.predict_proba(b.x);
  for (long i = 0; i < self.size(); ++i) CHECK(self[i] == b.y[static_cast<std::size_t>(i)]);

  Eigen::MatrixXd zero = b.x;
  zero.row(3).setZero();
  CHECK_THROWS_AS(KnnClassifier().fit(zero, b.y), NumericError);
  CHECK_THROWS_AS(knn.predict_proba(Eigen::MatrixXd::Ones(2, 4)), ShapeError);
}

TEST_CASE("logistic regression") {
  Rng rng(5);
  SUBCASE("separable data") {
    const Blobs b = blobs(60, 4, 2.0, rng);
    LogisticRegression lr;
    lr.fit(b.x, b.y);
    const Eigen::VectorXd p = lr.predict_proba(b.x);
    for (long i = 0; i < p.size(); ++i) CHECK((p[i] > 0.5) == (b.y[static_cast<std::size_t>(i)] == 1));
    CHECK(lr.gradient_norm(b.x, b.y) < 1e-5);
  }
  SUBCASE("the objective starts at log 2") {
    const Blobs b = blobs(30, 3, 0.5, rng);
    const Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXi>(b.y.data(), 30).cast<double>();
    const Eigen::VectorXd s = balanced_weights(b.y, "test");
    Eigen::VectorXd gw;
    double gb = 0;
    const double f = LogisticRegression::objective(b.x, y, s, Eigen::VectorXd::Zero(3), 0.0, 1.0, &gw, &gb);
    CHECK(f == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    // with balanced weights both classes pull equally on the bias
    CHECK(std::abs(gb) < 1e-12);
  }
  SUBCASE("analytic gradient agrees with finite differences") {
    const Blobs b = blobs(25, 3, 0.7, rng);
    const Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXi>(b.y.data(), 25).cast<double>();
    const Eigen::VectorXd s = balanced_weights(b.y, "test");
    Eigen::VectorXd w(3);
    w << 0.3, -0.2, 0.5;
    Eigen::VectorXd gw;
    double gb = 0;
    LogisticRegression::objective(b.x, y, s, w, 0.1, 0.5, &gw, &gb);
    const double h = 1e-6;
    for (int d = 0; d < 3; ++d) {
      Eigen::VectorXd wp = w, wm = w;
      wp[d] += h;
      wm[d] -= h;
      const double fd = (LogisticRegression::objective(b.x, y, s, wp, 0.1, 0.5, nullptr, nullptr) -
                         LogisticRegression::objective(b.x, y, s, wm, 0.1, 0.5, nullptr, nullptr)) /
                        (2 * h);
      CHECK(gw[d] == doctest::Approx(fd).epsilon(1e-6));
    }
  }
  SUBCASE("duplicating the data changes nothing") {
    const Blobs b = blobs(30, 3, 0.4, rng);
    Eigen::MatrixXd x2(60, 3);
    x2 << b.x, b.x;
    std::vector<int> y2 = b.y;
    y2.insert(y2.end(), b.y.begin(), b.y.end());
    LogisticRegression a, c;
    a.fit(b.x, b.y);
    c.fit(x2, y2);
    CHECK((a.weights() - c.weights()).cwiseAbs().maxCoeff() < 1e-6);
    CHECK(std::abs(a.bias() - c.bias()) < 1e-6);
  }
  SUBCASE("a missing class is a config error") {
    CHECK_THROWS_AS(LogisticRegression().fit(Eigen::MatrixXd::Ones(4, 2), std::vector<int>{0, 0, 0, 0}), ConfigError);
    CHECK_THROWS_AS(balanced_weights(std::vector<int>{1, 1}, "x"), ConfigError);
  }
}

TEST_CASE("balanced weights") {
  const std::vector<int> y{1, 0, 0, 0};
  const Eigen::VectorXd s = balanced_weights(y, "test");
  CHECK(s[0] == doctest::Approx(2.0));
  CHECK(s[1] == doctest::Approx(4.0 / 6.0));
  CHECK(s.sum() == doctest::Approx(4.0));
}

TEST_CASE("MLP") {
  Rng rng(9);
  const Blobs b = blobs(80, 4, 2.0, rng);
  SUBCASE("separable data") {
    MlpClassifier mlp(small_mlp(1));
    mlp.fit(b.x, b.y);
    CHECK(mlp.best_validation_accuracy() == 1.0);
    const Eigen::VectorXd p = mlp.predict_proba(b.x);
    int correct = 0;
    for (long i = 0; i < p.size(); ++i) correct += (p[i] > 0.5) == (b.y[static_cast<std::size_t>(i)] == 1);
    CHECK(correct >= 78);
  }
  SUBCASE("zero epochs still gives finite probabilities") {
    MlpConfig c = small_mlp(1);
    c.max_epochs = 0;
    MlpClassifier mlp(c);
    mlp.fit(b.x, b.y);
    const Eigen::VectorXd p = mlp.predict_proba(b.x);
    CHECK(p.allFinite());
    CHECK(p.minCoeff() > 0.0);
    CHECK(p.maxCoeff() < 1.0);
  }
  SUBCASE("seeds matter, and the same seed repeats") {
    MlpClassifier a(small_mlp(99)), b2(small_mlp(123)), c(small_mlp(99));
    a.fit(b.x, b.y);
    b2.fit(b.x, b.y);
    c.fit(b.x, b.y);
    CHECK(a.predict_proba(b.x) == c.predict_proba(b.x));
    CHECK(a.predict_proba(b.x) != b2.predict_proba(b.x));
  }
}

TEST_CASE("soft-vote ensemble") {
  const Eigen::MatrixXd x = Eigen::MatrixXd::Ones(3, 2);
  CHECK(fixed_ensemble({0.2, 0.4, 0.6, 0.8}).predict_proba(x)[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(fixed_ensemble({0.3, 0.3, 0.3}).predict_proba(x)[1] == doctest::Approx(0.3).epsilon(1e-15));
  Rng rng(2);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> ps(2 + rng.below(5));
    for (auto& p : ps) p = rng.uniform();
    const double v = fixed_ensemble(ps).predict_proba(x)[0];
    CHECK(v >= *std::min_element(ps.begin(), ps.end()) - 1e-15);
    CHECK(v <= *std::max_element(ps.begin(), ps.end()) + 1e-15);
    std::vector<double> shuffled = ps;
    rng.shuffle(shuffled.begin(), shuffled.end());
    CHECK(fixed_ensemble(shuffled).predict_proba(x)[0] == doctest::Approx(v).epsilon(1e-14));
  }
  std::vector<std::unique_ptr<ClassifierModel>> m;
  m.push_back(std::make_unique<Fixed>(0.1));
  m.push_back(std::make_unique<Fixed>(0.2, false));
  const SoftVoteEnsemble partial(std::move(m));
  CHECK_FALSE(partial.fitted());
  CHECK_THROWS_AS(partial.predict_proba(x), Error);
  CHECK_THROWS_AS(SoftVoteEnsemble({}), ConfigError);

  const SoftVoteEnsemble d = SoftVoteEnsemble::default_members();
  REQUIRE(d.members().size() == 4);
  CHECK(d.members()[0]->name() == "knn");
  CHECK(d.members()[1]->name() == "logistic_regression");
  CHECK(d.members()[2]->name() == "mlp");
}

TEST_CASE("classifier snapshots reproduce predictions") {
  testing::TempDir dir;
  Rng rng(14);
  const Blobs b = blobs(50, 4, 1.0, rng);
  std::vector<std::unique_ptr<ClassifierModel>> models;
  models.push_back(std::make_unique<KnnClassifier>());
  models.push_back(std::make_unique<LogisticRegression>());
  models.push_back(std::make_unique<MlpClassifier>(small_mlp(4)));
  int i = 0;
  for (auto& m : models) {
    m->fit(b.x, b.y);
    const auto path = (dir / ("m" + std::to_string(i++) + ".ckpt")).string();
    save_classifier(path, *m);
    const auto back = load_classifier(path);
    CHECK(back->name() == m->name());
    CHECK(back->predict_proba(b.x) == m->predict_proba(b.x));
  }
}
