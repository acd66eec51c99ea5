#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace docrl::ad {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
};

// Ordered collection of named parameters. Parameters are addressed by their
// position so that copies of a store (and of any model holding one) are
// self-contained.
class ParameterStore {
 public:
  size_t add(const std::string& name, Matrix init) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
    index_[name] = params_.size();
    Parameter p{name, std::move(init), Matrix()};
    p.grad = Matrix::Zero(p.value.rows(), p.value.cols());
    params_.push_back(std::move(p));
    return params_.size() - 1;
  }

  Parameter& operator[](size_t i) { return params_[i]; }
  const Parameter& operator[](size_t i) const { return params_[i]; }

  Parameter& at(const std::string& name) { return params_.at(index_.at(name)); }
  const Parameter& at(const std::string& name) const { return params_.at(index_.at(name)); }
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  size_t size() const { return params_.size(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  size_t num_scalars() const {
    size_t n = 0;
    for (const auto& p : params_) n += static_cast<size_t>(p.value.size());
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.grad.setZero();
  }

  bool all_finite() const {
    for (const auto& p : params_) {
      if (!p.value.allFinite()) return false;
    }
    return true;
  }

  // Copies values (not gradients) from a store with the same layout.
  void assign_values(const ParameterStore& other) {
    if (other.size() != size()) throw std::invalid_argument("parameter layout mismatch");
    for (size_t i = 0; i < params_.size(); ++i) params_[i].value = other.params_[i].value;
  }

 private:
  std::vector<Parameter> params_;
  std::map<std::string, size_t> index_;
};

class Tape;

// Handle to a node on a tape.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
};

// Records a computation and replays it backwards. Gradients of parameter
// leaves are accumulated into Parameter::grad, so several tapes may
// contribute to one optimizer step.
class Tape {
 public:
  struct Node {
    Matrix value;
    const Matrix* ref = nullptr;
    Matrix grad;
    std::function<void(Tape&, int)> backward;
  };

  Tape() { nodes_.reserve(256); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var push(Matrix value, std::function<void(Tape&, int)> backward = {}) {
    Node n;
    n.value = std::move(value);
    n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
  }

  Var constant(Matrix value) { return push(std::move(value)); }

  // Leaf that reads the parameter in place and routes its gradient to it.
  Var param(Parameter& p) {
    Node n;
    n.ref = &p.value;
    Parameter* target = &p;
    n.backward = [target](Tape& t, int self) { target->grad += t.nodes_[static_cast<size_t>(self)].grad; };
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
  }

  const Matrix& value(int id) const {
    const Node& n = nodes_[static_cast<size_t>(id)];
    return n.ref ? *n.ref : n.value;
  }

  bool has_grad(int id) const { return nodes_[static_cast<size_t>(id)].grad.size() > 0; }

  // Gradient buffer for a node, allocated as zeros on first use.
  Matrix& grad(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.grad.size() == 0) {
      const Matrix& v = value(id);
      n.grad = Matrix::Zero(v.rows(), v.cols());
    }
    return n.grad;
  }

  void backward(Var loss, double seed = 1.0) {
    if (loss.tape != this) throw std::invalid_argument("backward: variable from another tape");
    if (value(loss.id).size() != 1) throw std::invalid_argument("backward: loss must be a scalar");
    grad(loss.id)(0, 0) += seed;
    for (int id = loss.id; id >= 0; --id) {
      Node& n = nodes_[static_cast<size_t>(id)];
      if (n.grad.size() == 0 || !n.backward) continue;
      n.backward(*this, id);
    }
  }

  size_t size() const { return nodes_.size(); }

 private:
  std::vector<Node> nodes_;
};

inline const Matrix& Var::value() const { return tape->value(id); }

// ---------------------------------------------------------------------------
// Operations

inline Var matmul(Var a, Var b) {
  Tape& t = *a.tape;
  Matrix out = a.value() * b.value();
  return t.push(std::move(out), [a, b](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    t.grad(a.id).noalias() += g * t.value(b.id).transpose();
    t.grad(b.id).noalias() += t.value(a.id).transpose() * g;
  });
}

// a * b^T
inline Var matmul_nt(Var a, Var b) {
  Tape& t = *a.tape;
  Matrix out = a.value() * b.value().transpose();
  return t.push(std::move(out), [a, b](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    t.grad(a.id).noalias() += g * t.value(b.id);
    t.grad(b.id).noalias() += g.transpose() * t.value(a.id);
  });
}

inline Var add(Var a, Var b) {
  Tape& t = *a.tape;
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw std::invalid_argument("add: shape mismatch");
  Matrix out = a.value() + b.value();
  return t.push(std::move(out), [a, b](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    t.grad(a.id) += g;
    t.grad(b.id) += g;
  });
}

inline Var sub(Var a, Var b) {
  Tape& t = *a.tape;
  Matrix out = a.value() - b.value();
  return t.push(std::move(out), [a, b](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    t.grad(a.id) += g;
    t.grad(b.id) -= g;
  });
}

// Adds a 1 x c row vector to every row of a.
inline Var add_row(Var a, Var row) {
  Tape& t = *a.tape;
  if (row.rows() != 1 || row.cols() != a.cols()) throw std::invalid_argument("add_row: shape mismatch");
  Matrix out = a.value().rowwise() + row.value().row(0);
  return t.push(std::move(out), [a, row](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    t.grad(a.id) += g;
    t.grad(row.id) += g.colwise().sum();
  });
}

inline Var scale(Var a, double s) {
  Tape& t = *a.tape;
  Matrix out = a.value() * s;
  return t.push(std::move(out), [a, s](Tape& t, int self) { t.grad(a.id) += t.grad(self) * s; });
}

inline Var hadamard(Var a, Var b) {
  Tape& t = *a.tape;
  Matrix out = a.value().cwiseProduct(b.value());
  return t.push(std::move(out), [a, b](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    t.grad(a.id) += g.cwiseProduct(t.value(b.id));
    t.grad(b.id) += g.cwiseProduct(t.value(a.id));
  });
}

// tanh approximation of GELU.
inline Var gelu(Var a) {
  Tape& t = *a.tape;
  constexpr double k = 0.7978845608028654;  // sqrt(2 / pi)
  constexpr double c = 0.044715;
  const Matrix& x = a.value();
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double v = x.data()[i];
    out.data()[i] = 0.5 * v * (1.0 + std::tanh(k * (v + c * v * v * v)));
  }
  return t.push(std::move(out), [a](Tape& t, int self) {
    const Matrix& x = t.value(a.id);
    const Matrix& g = t.grad(self);
    Matrix& ga = t.grad(a.id);
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double v = x.data()[i];
      const double th = std::tanh(k * (v + c * v * v * v));
      const double d = 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * k * (1.0 + 3.0 * c * v * v);
      ga.data()[i] += g.data()[i] * d;
    }
  });
}

inline Var tanh(Var a) {
  Tape& t = *a.tape;
  Matrix out = a.value().array().tanh().matrix();
  return t.push(std::move(out), [a](Tape& t, int self) {
    const Matrix& y = t.value(self);
    t.grad(a.id) += t.grad(self).cwiseProduct((1.0 - y.array().square()).matrix());
  });
}

// Row-wise layer normalization with learned gain and bias (1 x c each).
inline Var layer_norm(Var a, Var gain, Var bias, double eps = 1e-5) {
  Tape& t = *a.tape;
  const Matrix& x = a.value();
  const Eigen::Index n = x.rows(), c = x.cols();
  Matrix xhat(n, c);
  RowVector inv_std(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mu = x.row(i).mean();
    const double var = (x.row(i).array() - mu).square().mean();
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (x.row(i).array() - mu) * inv_std(i);
  }
  Matrix out = (xhat.array().rowwise() * gain.value().row(0).array()).matrix();
  out.rowwise() += bias.value().row(0);
  return t.push(std::move(out), [a, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    const Eigen::Index n = g.rows(), c = g.cols();
    t.grad(gain.id) += (g.cwiseProduct(xhat)).colwise().sum();
    t.grad(bias.id) += g.colwise().sum();
    Matrix& ga = t.grad(a.id);
    const auto gamma = t.value(gain.id).row(0).array();
    for (Eigen::Index i = 0; i < n; ++i) {
      const Eigen::Array<double, 1, Eigen::Dynamic> gh = g.row(i).array() * gamma;
      const double mean_gh = gh.mean();
      const double mean_ghx = (gh * xhat.row(i).array()).mean();
      ga.row(i).array() += inv_std(i) * (gh - mean_gh - xhat.row(i).array() * mean_ghx);
    }
    (void)c;
  });
}

inline Var softmax_rows(Var a) {
  Tape& t = *a.tape;
  const Matrix& x = a.value();
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double m = x.row(i).maxCoeff();
    out.row(i) = (x.row(i).array() - m).exp().matrix();
    out.row(i) /= out.row(i).sum();
  }
  return t.push(std::move(out), [a](Tape& t, int self) {
    const Matrix& p = t.value(self);
    const Matrix& g = t.grad(self);
    Matrix& ga = t.grad(a.id);
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
      const double dot = g.row(i).dot(p.row(i));
      ga.row(i).array() += p.row(i).array() * (g.row(i).array() - dot);
    }
  });
}

// log softmax of the 1 x n logits restricted to positions [from, n), evaluated
// at `index`. Returns a 1 x 1 node.
inline Var log_prob_at(Var logits, int index, int from = 0) {
  Tape& t = *logits.tape;
  const Matrix& x = logits.value();
  const int n = static_cast<int>(x.cols());
  if (x.rows() != 1 || from < 0 || from >= n || index < from || index >= n) {
    throw std::invalid_argument("log_prob_at: index out of range");
  }
  const auto seg = x.row(0).segment(from, n - from);
  const double m = seg.maxCoeff();
  const double lse = m + std::log((seg.array() - m).exp().sum());
  Matrix out(1, 1);
  out(0, 0) = x(0, index) - lse;
  return t.push(std::move(out), [logits, index, from, n, lse](Tape& t, int self) {
    const double g = t.grad(self)(0, 0);
    const Matrix& x = t.value(logits.id);
    Matrix& gl = t.grad(logits.id);
    for (int j = from; j < n; ++j) gl(0, j) -= g * std::exp(x(0, j) - lse);
    gl(0, index) += g;
  });
}

// Element-wise max(a, floor); the floored entries pass no gradient.
inline Var floor_at(Var a, double floor) {
  Tape& t = *a.tape;
  Matrix out = a.value().cwiseMax(floor);
  return t.push(std::move(out), [a, floor](Tape& t, int self) {
    const Matrix& x = t.value(a.id);
    const Matrix& g = t.grad(self);
    Matrix& ga = t.grad(a.id);
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      if (x.data()[i] >= floor) ga.data()[i] += g.data()[i];
    }
  });
}

inline Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
  Tape& t = *a.tape;
  Matrix out = a.value().middleCols(start, count);
  return t.push(std::move(out), [a, start, count](Tape& t, int self) {
    t.grad(a.id).middleCols(start, count) += t.grad(self);
  });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  Tape& t = *parts.front().tape;
  Eigen::Index cols = 0;
  const Eigen::Index rows = parts.front().rows();
  for (const auto& p : parts) cols += p.cols();
  Matrix out(rows, cols);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return t.push(std::move(out), [parts](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    Eigen::Index at = 0;
    for (const auto& p : parts) {
      const Eigen::Index c = t.value(p.id).cols();
      t.grad(p.id) += g.middleCols(at, c);
      at += c;
    }
  });
}

inline Var sum(Var a) {
  Tape& t = *a.tape;
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return t.push(std::move(out), [a](Tape& t, int self) { t.grad(a.id).array() += t.grad(self)(0, 0); });
}

inline Var add_all(const std::vector<Var>& terms) {
  if (terms.empty()) throw std::invalid_argument("add_all: no terms");
  Tape& t = *terms.front().tape;
  Matrix out = terms.front().value();
  for (size_t i = 1; i < terms.size(); ++i) out += terms[i].value();
  return t.push(std::move(out), [terms](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    for (const auto& v : terms) t.grad(v.id) += g;
  });
}

// (a - target)^2 summed, for a constant target of the same shape.
inline Var squared_error(Var a, Matrix target) {
  Tape& t = *a.tape;
  Matrix out(1, 1);
  out(0, 0) = (a.value() - target).squaredNorm();
  return t.push(std::move(out), [a, target = std::move(target)](Tape& t, int self) {
    t.grad(a.id) += 2.0 * t.grad(self)(0, 0) * (t.value(a.id) - target);
  });
}

// Clipped surrogate term min(r A, clip(r, 1-eps, 1+eps) A) with
// r = exp(logp - logp_old). logp is a 1 x 1 node.
inline Var clipped_surrogate(Var logp, double logp_old, double advantage, double eps) {
  Tape& t = *logp.tape;
  const double ratio = std::exp(logp.scalar() - logp_old);
  const double unclipped = ratio * advantage;
  const double clipped = std::clamp(ratio, 1.0 - eps, 1.0 + eps) * advantage;
  Matrix out(1, 1);
  out(0, 0) = std::min(unclipped, clipped);
  // The gradient flows only when the unclipped branch is the active minimum.
  const bool active = unclipped <= clipped;
  return t.push(std::move(out), [logp, active, unclipped](Tape& t, int self) {
    if (active) t.grad(logp.id)(0, 0) += t.grad(self)(0, 0) * unclipped;
  });
}

// Rows of a parameter table; the gradient is scattered straight into
// Parameter::grad.
inline Var gather_rows(Tape& t, Parameter& table, std::vector<int> rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), table.value.cols());
  for (size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = table.value.row(rows[i]);
  Parameter* p = &table;
  return t.push(std::move(out), [p, rows = std::move(rows)](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    for (size_t i = 0; i < rows.size(); ++i) p->grad.row(rows[i]) += g.row(static_cast<Eigen::Index>(i));
  });
}

// One weighted bag of table rows per output row: out_i = sum_k w_ik T[b_ik].
using Bag = std::vector<std::pair<int, double>>;

inline Var embedding_bag(Tape& t, Parameter& table, std::vector<Bag> bags) {
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(bags.size()), table.value.cols());
  for (size_t i = 0; i < bags.size(); ++i) {
    for (const auto& [row, w] : bags[i]) out.row(static_cast<Eigen::Index>(i)) += w * table.value.row(row);
  }
  Parameter* p = &table;
  return t.push(std::move(out), [p, bags = std::move(bags)](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    for (size_t i = 0; i < bags.size(); ++i) {
      for (const auto& [row, w] : bags[i]) p->grad.row(row) += w * g.row(static_cast<Eigen::Index>(i));
    }
  });
}

// ---------------------------------------------------------------------------
// Optimizer

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  void step(ParameterStore& params) {
    step(params, [](const Parameter&) { return true; });
  }

  // Updates only the parameters accepted by `select`.
  template <typename Select>
  void step(ParameterStore& params, Select select) {
    if (m_.empty()) {
      for (const auto& p : params) {
        m_.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
        v_.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
      }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    const double step = config_.learning_rate * std::sqrt(bc2) / bc1;
    for (size_t i = 0; i < params.size(); ++i) {
      Parameter& p = params[i];
      if (!select(p)) continue;
      m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * p.grad;
      v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * p.grad.cwiseAbs2();
      p.value.array() -= step * m_[i].array() / (v_[i].array().sqrt() + config_.eps * std::sqrt(bc2));
    }
  }

  long steps() const { return t_; }
  const AdamConfig& config() const { return config_; }
  void set_learning_rate(double lr) { config_.learning_rate = lr; }

 private:
  AdamConfig config_;
  std::vector<Matrix> m_, v_;
  long t_ = 0;
};

}  // namespace docrl::ad
