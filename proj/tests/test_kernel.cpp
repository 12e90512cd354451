#include <doctest.h>

#include <cmath>
#include <fstream>
#include <numbers>

#include "gradcheck_cases.hpp"
#include "support.hpp"
#include "trajret/checkpoint.hpp"
#include "trajret/error.hpp"
#include "trajret/optimizer.hpp"

using namespace trajret;
using ad::Graph;
using ad::Matrix;
using ad::Parameter;

namespace {
Matrix row(std::initializer_list<double> v) {
  Matrix m(1, static_cast<long>(v.size()));
  long i = 0;
  for (double x : v) m(0, i++) = x;
  return m;
}
}  // namespace

TEST_CASE("forward examples") {
  Graph g;
  const Matrix n = ad::l2_normalize(g.constant(row({3, 4}))).value();
  CHECK(n(0, 0) == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(n(0, 1) == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(ad::relu(g.constant(row({-1, 0, 2}))).value() == row({0, 0, 2}));
  const double lse = ad::logsumexp(g.constant(row({1000, 1000}))).scalar();
  CHECK(std::isfinite(lse));
  CHECK(lse == doctest::Approx(1000.0 + std::numbers::ln2).epsilon(1e-15));
  const Matrix rows = ad::logsumexp_rows(g.constant(Matrix::Constant(2, 3, -800.0))).value();
  CHECK(rows(1, 0) == doctest::Approx(-800.0 + std::log(3.0)).epsilon(1e-15));
}

TEST_CASE("shape and domain errors") {
  Graph g;
  CHECK_THROWS_AS(ad::l2_normalize(g.constant(Matrix::Zero(1, 3))), NumericError);
  CHECK_THROWS_AS(ad::add(g.constant(Matrix::Zero(2, 3)), g.constant(Matrix::Zero(3, 2))), ShapeError);
  CHECK_THROWS_AS(ad::dense(g.constant(Matrix::Zero(2, 3)), g.constant(Matrix::Zero(2, 2)),
                            g.constant(Matrix::Zero(1, 2))),
                  ShapeError);
  CHECK_THROWS_AS(g.backward(g.input(Matrix::Ones(2, 2))), ShapeError);
  CHECK_THROWS_AS(g.constant(row({1.0, std::nan("")})), NumericError);
}

TEST_CASE("backward on a linear loss gives the input structure") {
  Rng rng(5);
  Parameter w("w", gradcheck::gaussian(3, 2, rng));
  const Matrix x = gradcheck::gaussian(4, 3, rng);
  Graph g;
  g.backward(ad::sum(ad::dense(g.constant(x), g.param(w), g.constant(Matrix::Zero(1, 2)))));
  // d/dW sum(xW) = x^T 1
  const Matrix expected = x.transpose() * Matrix::Ones(4, 2);
  CHECK((w.grad - expected).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("constant loss yields exactly zero gradients") {
  Parameter w("w", Matrix::Ones(2, 2));
  Graph g;
  ad::Var used = g.param(w);
  (void)used;
  g.backward(ad::sum(g.constant(Matrix::Ones(2, 2))));
  CHECK(w.grad == Matrix::Zero(2, 2));
}

TEST_CASE("gradients accumulate across backward calls until zeroed") {
  Parameter w("w", Matrix::Constant(1, 1, 3.0));
  for (int i = 0; i < 2; ++i) {
    Graph g;
    g.backward(ad::mul(g.param(w), g.param(w)));
  }
  CHECK(w.grad(0, 0) == doctest::Approx(12.0));
  w.zero_grad();
  CHECK(w.grad(0, 0) == 0.0);
}

TEST_CASE("finite-difference checks on every op") {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    for (const auto& o : gradcheck::run_config(seed)) {
      CAPTURE(o.op);
      CAPTURE(seed);
      CHECK(o.rel_error < 1e-4);
    }
  }
}

TEST_CASE("dropout is the identity at inference or p = 0") {
  Rng rng(2);
  const Matrix x = gradcheck::gaussian(4, 5, rng);
  Graph g;
  CHECK(ad::dropout(g.constant(x), 0.3, false, rng).value() == x);
  CHECK(ad::dropout(g.constant(x), 0.0, true, rng).value() == x);
  // inverted scaling: surviving entries are scaled by 1/(1-p)
  const Matrix d = ad::dropout(g.constant(Matrix::Ones(50, 50)), 0.5, true, rng).value();
  for (long i = 0; i < d.size(); ++i) CHECK((d.data()[i] == 0.0 || d.data()[i] == 2.0));
}

TEST_CASE("batchnorm inference uses frozen running statistics") {
  ad::BatchNormStats stats(3);
  stats.running_mean = row({1, 2, 3});
  stats.running_var = row({4, 1, 0.25});
  Graph g;
  const Matrix x = Matrix::Constant(2, 3, 2.0);
  const auto gamma = g.constant(Matrix::Ones(1, 3));
  const auto beta = g.constant(Matrix::Zero(1, 3));
  const Matrix a = ad::batchnorm(g.constant(x), gamma, beta, stats, false).value();
  const Matrix b = ad::batchnorm(g.constant(x), gamma, beta, stats, false).value();
  CHECK(a == b);
  CHECK(a(0, 0) == doctest::Approx(1.0 / std::sqrt(4.0 + stats.epsilon)));
  CHECK(a(0, 2) == doctest::Approx(-1.0 / std::sqrt(0.25 + stats.epsilon)));
  CHECK(stats.running_mean == row({1, 2, 3}));
}

TEST_CASE("forward and backward are bit-reproducible") {
  auto run = [] {
    auto outs = gradcheck::run_config(11);
    std::vector<double> v;
    for (auto& o : outs) v.push_back(o.rel_error);
    return v;
  };
  CHECK(run() == run());
}

TEST_CASE("cosine schedule") {
  ad::OptimizerConfig cfg;
  CHECK(ad::cosine_lr(cfg, 0) == cfg.learning_rate);
  CHECK(ad::cosine_lr(cfg, cfg.cosine_t_max) == doctest::Approx(0.0).epsilon(1e-20));
  CHECK(std::abs(ad::cosine_lr(cfg, cfg.cosine_t_max)) < 1e-20);
  CHECK(ad::cosine_lr(cfg, 25) == doctest::Approx(0.5e-4));
}

TEST_CASE("zero gradients and zero weight decay leave parameters unchanged") {
  ad::OptimizerConfig cfg;
  cfg.weight_decay = 0.0;
  Rng rng(1);
  Parameter p("p", gradcheck::gaussian(3, 3, rng));
  const Matrix before = p.value;
  p.grad = Matrix::Zero(3, 3);
  std::vector<Parameter*> ps{&p};
  for (int e = 0; e < 3; ++e) ad::optimizer_step(ps, cfg, e);
  CHECK(p.value == before);
}

TEST_CASE("AdamW matches a hand-unrolled three-step trajectory") {
  ad::OptimizerConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.weight_decay = 0.01;
  cfg.cosine_t_max = 10;
  cfg.clip_norm = 1e9;
  const double grads[3] = {0.5, -1.5, 0.25};
  Parameter p("p", Matrix::Constant(1, 1, 2.0));
  std::vector<Parameter*> ps{&p};

  double theta = 2.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 3; ++t) {
    p.grad(0, 0) = grads[t - 1];
    ad::optimizer_step(ps, cfg, t - 1);
    const double lr = 0.5 * 0.1 * (1.0 + std::cos(std::numbers::pi * (t - 1) / 10.0));
    const double gr = grads[t - 1];
    m = 0.9 * m + 0.1 * gr;
    v = 0.999 * v + 0.001 * gr * gr;
    const double mhat = m / (1.0 - std::pow(0.9, t));
    const double vhat = v / (1.0 - std::pow(0.999, t));
    theta = theta - lr * 0.01 * theta - lr * mhat / (std::sqrt(vhat) + 1e-8);
    CHECK(std::abs(p.value(0, 0) - theta) < 1e-12);
  }
}

TEST_CASE("clipping bounds the global gradient norm") {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    Parameter a("a", gradcheck::gaussian(3, 2, rng));
    Parameter b("b", gradcheck::gaussian(1, 4, rng));
    a.grad = gradcheck::gaussian(3, 2, rng, 10.0);
    b.grad = gradcheck::gaussian(1, 4, rng, 10.0);
    std::vector<Parameter*> ps{&a, &b};
    const double before = ad::global_grad_norm(ps);
    const double reported = ad::clip_grad_norm(ps, 1.0);
    CHECK(reported == before);
    CHECK(ad::global_grad_norm(ps) <= 1.0 + 1e-9);
  }
}

TEST_CASE("optimizer config validation") {
  ad::OptimizerConfig cfg;
  cfg.learning_rate = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.accumulation_steps = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("checkpoints round-trip losslessly") {
  testing::TempDir dir;
  Rng rng(8);
  ad::Checkpoint ck{R"({"note":"x"})", {{"a", gradcheck::gaussian(3, 4, rng)}, {"b", gradcheck::gaussian(1, 1, rng)},
                                         {"empty", Matrix(0, 5)}}};
  ad::save_checkpoint(dir / "c.bin", ck);
  const ad::Checkpoint back = ad::load_checkpoint(dir / "c.bin");
  CHECK(back.config_json == ck.config_json);
  REQUIRE(back.tensors.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back.tensors[i].name == ck.tensors[i].name);
    CHECK(back.tensors[i].value.rows() == ck.tensors[i].value.rows());
    CHECK(back.tensors[i].value.cols() == ck.tensors[i].value.cols());
    CHECK(back.tensors[i].value == ck.tensors[i].value);
  }
  CHECK(back.at("b") == ck.tensors[1].value);
  CHECK_THROWS(back.at("missing"));

  const std::string bytes = testing::slurp(dir / "c.bin");
  {
    std::ofstream out(dir / "t.bin", std::ios::binary);
    out << bytes.substr(0, bytes.size() - 7);
  }
  CHECK_THROWS_AS(ad::load_checkpoint(dir / "t.bin"), ParseError);
  std::string flipped = bytes;
  flipped[flipped.size() / 2] ^= 0x40;
  {
    std::ofstream out(dir / "f.bin", std::ios::binary);
    out << flipped;
  }
  CHECK_THROWS_AS(ad::load_checkpoint(dir / "f.bin"), ParseError);
}
