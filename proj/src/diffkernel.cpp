#include "trajret/diffkernel.hpp"

#include <cmath>
#include <string>

#include "trajret/error.hpp"

namespace trajret::ad {

namespace {

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError("diffkernel", std::string(op) + ": shape mismatch (" +
                                       std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                                       " vs " + std::to_string(b.rows()) + "x" +
                                       std::to_string(b.cols()) + ")");
  }
}

}  // namespace

Parameter::Parameter(std::string n, Matrix init)
    : name(std::move(n)),
      value(std::move(init)),
      grad(Matrix::Zero(value.rows(), value.cols())),
      first_moment(Matrix::Zero(value.rows(), value.cols())),
      second_moment(Matrix::Zero(value.rows(), value.cols())) {}

const Matrix& Var::value() const { return graph_->value(id_); }

double Var::scalar() const {
  const Matrix& v = value();
  if (v.size() != 1) throw ShapeError("diffkernel", "scalar() on a non-scalar value");
  return v(0, 0);
}

Var Graph::constant(Matrix value) {
  if (!value.allFinite()) throw NumericError("diffkernel", "constant: non-finite value");
  nodes_.push_back(Node{std::move(value), {}, false, false, nullptr, {}, "constant"});
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Graph::input(Matrix value) {
  if (!value.allFinite()) throw NumericError("diffkernel", "input: non-finite value");
  nodes_.push_back(Node{std::move(value), {}, true, false, nullptr, {}, "input"});
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Graph::param(Parameter& p) {
  if (!p.value.allFinite()) throw NumericError("diffkernel", "parameter " + p.name + " is not finite");
  if (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols()) {
    p.grad = Matrix::Zero(p.value.rows(), p.value.cols());
  }
  // Parameter leaves read the parameter storage directly; no copy is taken.
  nodes_.push_back(Node{Matrix(), {}, true, false, &p, {}, "param"});
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Graph::record(Matrix value, std::initializer_list<Var> parents, BackwardFn backward,
                  const char* op) {
  if (!value.allFinite()) throw NumericError("diffkernel", std::string(op) + ": non-finite output");
  bool needs = false;
  for (const Var& p : parents) needs = needs || requires_grad(p);
  nodes_.push_back(Node{std::move(value), {}, needs, false, nullptr,
                        needs ? std::move(backward) : BackwardFn{}, op});
  return {this, static_cast<int>(nodes_.size()) - 1};
}

void Graph::accumulate(Var v, const Matrix& g) {
  Node& n = nodes_[static_cast<std::size_t>(v.id())];
  if (!n.requires_grad) return;
  if (!n.has_grad) {
    n.grad = g;
    n.has_grad = true;
  } else {
    n.grad += g;
  }
}

void Graph::backward(Var loss) {
  if (loss.value().size() != 1) {
    throw ShapeError("diffkernel", "backward() needs a scalar loss, got " +
                                       std::to_string(loss.rows()) + "x" +
                                       std::to_string(loss.cols()));
  }
  for (auto& n : nodes_) {
    n.has_grad = false;
    n.grad.resize(0, 0);
  }
  accumulate(loss, Matrix::Ones(1, 1));
  for (int id = loss.id(); id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.has_grad) continue;
    if (!n.grad.allFinite()) throw NumericError("diffkernel", std::string(n.op) + ": non-finite gradient");
    if (n.param != nullptr) {
      n.param->grad += n.grad;
    } else if (n.backward) {
      const Matrix g = std::move(n.grad);
      n.has_grad = false;
      n.backward(g);
    }
  }
}

const Matrix& Graph::grad(Var v) const {
  const Node& n = nodes_[static_cast<std::size_t>(v.id())];
  if (!n.has_grad) throw Error("diffkernel", "no gradient recorded for node");
  return n.grad;
}

std::vector<const Parameter*> Graph::parameter_uses() const {
  std::vector<const Parameter*> out;
  for (const auto& n : nodes_) {
    if (n.param != nullptr) out.push_back(n.param);
  }
  return out;
}

// ---- ops ---------------------------------------------------------------------

Var dense(Var x, Var weight, Var bias) {
  if (x.cols() != weight.rows()) throw ShapeError("diffkernel", "dense: input width does not match weight rows");
  if (bias.rows() != 1 || bias.cols() != weight.cols()) throw ShapeError("diffkernel", "dense: bias must be 1 x out");
  Graph& g = x.graph();
  Matrix y = x.value() * weight.value();
  y.rowwise() += bias.value().row(0);
  return g.record(std::move(y), {x, weight, bias}, [&g, x, weight, bias](const Matrix& dy) {
    if (g.requires_grad(x)) g.accumulate(x, dy * weight.value().transpose());
    if (g.requires_grad(weight)) g.accumulate(weight, x.value().transpose() * dy);
    if (g.requires_grad(bias)) g.accumulate(bias, dy.colwise().sum());
  }, "dense");
}

Var relu(Var x) {
  Graph& g = x.graph();
  Matrix y = x.value().cwiseMax(0.0);
  return g.record(std::move(y), {x}, [&g, x](const Matrix& dy) {
    g.accumulate(x, (x.value().array() > 0.0).cast<double>().matrix().cwiseProduct(dy));
  }, "relu");
}

Var dropout(Var x, double p, bool training, Rng& rng) {
  if (p < 0.0 || p >= 1.0) throw ConfigError("diffkernel", "dropout p", "must be in [0, 1)");
  if (!training || p == 0.0) return x;
  Graph& g = x.graph();
  Matrix mask(x.rows(), x.cols());
  const double keep_scale = 1.0 / (1.0 - p);
  for (Eigen::Index c = 0; c < mask.cols(); ++c) {
    for (Eigen::Index r = 0; r < mask.rows(); ++r) {
      mask(r, c) = rng.uniform() < p ? 0.0 : keep_scale;
    }
  }
  Matrix y = x.value().cwiseProduct(mask);
  return g.record(std::move(y), {x}, [&g, x, mask = std::move(mask)](const Matrix& dy) {
    g.accumulate(x, dy.cwiseProduct(mask));
  }, "dropout");
}

Var l2_normalize(Var x) {
  Graph& g = x.graph();
  const Eigen::VectorXd norms = x.value().rowwise().norm();
  for (Eigen::Index r = 0; r < norms.size(); ++r) {
    if (!(norms[r] > 0.0)) throw NumericError("diffkernel", "l2_normalize: zero-norm row " + std::to_string(r));
  }
  Matrix y = norms.cwiseInverse().asDiagonal() * x.value();
  const int y_id = static_cast<int>(g.size());
  return g.record(std::move(y), {x}, [&g, x, norms, y_id](const Matrix& dy) {
    const Matrix& yv = g.value(y_id);
    const Eigen::VectorXd proj = yv.cwiseProduct(dy).rowwise().sum();
    Matrix dx = dy - proj.asDiagonal() * yv;
    g.accumulate(x, norms.cwiseInverse().asDiagonal() * dx);
  }, "l2_normalize");
}

Var add(Var a, Var b) {
  require_same_shape(a, b, "add");
  Graph& g = a.graph();
  return g.record(a.value() + b.value(), {a, b}, [&g, a, b](const Matrix& dy) {
    g.accumulate(a, dy);
    g.accumulate(b, dy);
  }, "add");
}

Var sub(Var a, Var b) {
  require_same_shape(a, b, "sub");
  Graph& g = a.graph();
  return g.record(a.value() - b.value(), {a, b}, [&g, a, b](const Matrix& dy) {
    g.accumulate(a, dy);
    g.accumulate(b, -dy);
  }, "sub");
}

Var mul(Var a, Var b) {
  require_same_shape(a, b, "mul");
  Graph& g = a.graph();
  return g.record(a.value().cwiseProduct(b.value()), {a, b}, [&g, a, b](const Matrix& dy) {
    if (g.requires_grad(a)) g.accumulate(a, dy.cwiseProduct(b.value()));
    if (g.requires_grad(b)) g.accumulate(b, dy.cwiseProduct(a.value()));
  }, "mul");
}

Var scale(Var x, double c) {
  Graph& g = x.graph();
  return g.record(x.value() * c, {x}, [&g, x, c](const Matrix& dy) { g.accumulate(x, dy * c); },
                  "scale");
}

Var slice_rows(Var x, Eigen::Index begin, Eigen::Index count) {
  if (begin < 0 || count < 0 || begin + count > x.rows()) throw ShapeError("diffkernel", "slice_rows: out of range");
  Graph& g = x.graph();
  return g.record(x.value().middleRows(begin, count), {x}, [&g, x, begin, count](const Matrix& dy) {
    Matrix dx = Matrix::Zero(x.rows(), x.cols());
    dx.middleRows(begin, count) = dy;
    g.accumulate(x, dx);
  }, "slice_rows");
}

Var sum(Var x) {
  Graph& g = x.graph();
  return g.record(Matrix::Constant(1, 1, x.value().sum()), {x}, [&g, x](const Matrix& dy) {
    g.accumulate(x, Matrix::Constant(x.rows(), x.cols(), dy(0, 0)));
  }, "sum");
}

Var mean(Var x) {
  if (x.value().size() == 0) throw ShapeError("diffkernel", "mean of an empty tensor");
  Graph& g = x.graph();
  const double n = static_cast<double>(x.value().size());
  return g.record(Matrix::Constant(1, 1, x.value().mean()), {x}, [&g, x, n](const Matrix& dy) {
    g.accumulate(x, Matrix::Constant(x.rows(), x.cols(), dy(0, 0) / n));
  }, "mean");
}

Var logsumexp(Var x) {
  if (x.value().size() == 0) throw ShapeError("diffkernel", "logsumexp of an empty tensor");
  Graph& g = x.graph();
  const double m = x.value().maxCoeff();
  const double lse = m + std::log((x.value().array() - m).exp().sum());
  return g.record(Matrix::Constant(1, 1, lse), {x}, [&g, x, lse](const Matrix& dy) {
    g.accumulate(x, ((x.value().array() - lse).exp() * dy(0, 0)).matrix());
  }, "logsumexp");
}

Var logsumexp_rows(Var x) {
  if (x.cols() == 0) throw ShapeError("diffkernel", "logsumexp_rows with zero columns");
  Graph& g = x.graph();
  const Eigen::VectorXd m = x.value().rowwise().maxCoeff();
  const Eigen::VectorXd lse =
      m.array() + (x.value().colwise() - m).array().exp().rowwise().sum().log();
  return g.record(lse, {x}, [&g, x, lse](const Matrix& dy) {
    Matrix softmax = (x.value().colwise() - lse).array().exp();
    g.accumulate(x, dy.col(0).asDiagonal() * softmax);
  }, "logsumexp_rows");
}

Var batchnorm(Var x, Var gamma, Var beta, BatchNormStats& stats, bool training,
              Eigen::Index group_rows) {
  const Eigen::Index n = x.rows();
  const Eigen::Index f = x.cols();
  if (gamma.rows() != 1 || gamma.cols() != f || beta.rows() != 1 || beta.cols() != f) {
    throw ShapeError("diffkernel", "batchnorm: gamma/beta must be 1 x features");
  }
  if (stats.running_mean.size() != f) throw ShapeError("diffkernel", "batchnorm: running stats width mismatch");
  Graph& g = x.graph();
  const double eps = stats.epsilon;

  if (!training) {
    const RowVector inv_std = (stats.running_var.array() + eps).rsqrt();
    const RowVector a = gamma.value().row(0).cwiseProduct(inv_std);
    Matrix y = (x.value().rowwise() - stats.running_mean).array().rowwise() * a.array();
    y.rowwise() += beta.value().row(0);
    const Matrix xhat = (x.value().rowwise() - stats.running_mean).array().rowwise() * inv_std.array();
    return g.record(std::move(y), {x, gamma, beta}, [&g, x, gamma, beta, a, xhat](const Matrix& dy) {
      if (g.requires_grad(x)) g.accumulate(x, dy.array().rowwise() * a.array());
      if (g.requires_grad(gamma)) g.accumulate(gamma, dy.cwiseProduct(xhat).colwise().sum());
      if (g.requires_grad(beta)) g.accumulate(beta, dy.colwise().sum());
    }, "batchnorm_eval");
  }

  const Eigen::Index group = group_rows <= 0 ? n : std::min(group_rows, n);
  const Eigen::Index groups = std::max<Eigen::Index>(1, n / group);
  std::vector<std::pair<Eigen::Index, Eigen::Index>> spans;
  for (Eigen::Index t = 0; t < groups; ++t) {
    const Eigen::Index begin = t * group;
    const Eigen::Index count = (t == groups - 1) ? n - begin : group;
    if (count < 2) throw ShapeError("diffkernel", "batchnorm: training needs >= 2 rows per group");
    spans.emplace_back(begin, count);
  }

  Matrix xhat(n, f);
  Matrix inv_std(static_cast<Eigen::Index>(spans.size()), f);
  for (std::size_t s = 0; s < spans.size(); ++s) {
    const auto [begin, count] = spans[s];
    const auto block = x.value().middleRows(begin, count);
    const RowVector mu = block.colwise().mean();
    const Matrix centered = block.rowwise() - mu;
    const RowVector var = centered.array().square().colwise().sum() / static_cast<double>(count);
    const RowVector istd = (var.array() + eps).rsqrt();
    inv_std.row(static_cast<Eigen::Index>(s)) = istd;
    xhat.middleRows(begin, count) = centered.array().rowwise() * istd.array();
    const double m = stats.momentum;
    const RowVector unbiased = var * (static_cast<double>(count) / static_cast<double>(count - 1));
    stats.running_mean = (1.0 - m) * stats.running_mean + m * mu;
    stats.running_var = (1.0 - m) * stats.running_var + m * unbiased;
  }
  Matrix y = xhat.array().rowwise() * gamma.value().row(0).array();
  y.rowwise() += beta.value().row(0);
  return g.record(std::move(y), {x, gamma, beta}, [&g, x, gamma, beta, xhat, inv_std, spans](const Matrix& dy) {
    if (g.requires_grad(gamma)) g.accumulate(gamma, dy.cwiseProduct(xhat).colwise().sum());
    if (g.requires_grad(beta)) g.accumulate(beta, dy.colwise().sum());
    if (!g.requires_grad(x)) return;
    Matrix dx(x.rows(), x.cols());
    const RowVector gam = gamma.value().row(0);
    for (std::size_t s = 0; s < spans.size(); ++s) {
      const auto [begin, count] = spans[s];
      const double cnt = static_cast<double>(count);
      const Matrix dxhat = dy.middleRows(begin, count).array().rowwise() * gam.array();
      const auto xh = xhat.middleRows(begin, count);
      const RowVector sum_d = dxhat.colwise().sum();
      const RowVector sum_dx = dxhat.cwiseProduct(xh).colwise().sum();
      Matrix part = (cnt * dxhat).rowwise() - sum_d;
      part.array() -= xh.array().rowwise() * sum_dx.array();
      dx.middleRows(begin, count) =
          part.array().rowwise() * (inv_std.row(static_cast<Eigen::Index>(s)).array() / cnt);
    }
    g.accumulate(x, dx);
  }, "batchnorm_train");
}

}  // namespace trajret::ad
