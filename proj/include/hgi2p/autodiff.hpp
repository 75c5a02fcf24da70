#pragma once

// Minimal reverse-mode differentiation over dense matrices. Each op records its
// value and a closure that pushes the output adjoint to its inputs; nodes whose
// inputs are all constant record no closure.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "hgi2p/error.hpp"

namespace hgi2p::ad {

class Tape;

struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Eigen::MatrixXd& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Eigen::MatrixXd&)>;

  Var constant(Eigen::MatrixXd v) { return push(std::move(v), false, nullptr); }
  Var variable(Eigen::MatrixXd v) { return push(std::move(v), true, nullptr); }

  const Eigen::MatrixXd& value(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].value; }
  bool requires_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].requires_grad; }

  /// Adjoint of a node after backward(); zero when nothing reached it.
  Eigen::MatrixXd grad(Var v) const {
    const Node& n = nodes_[static_cast<std::size_t>(v.id)];
    if (n.grad.size() == 0) return Eigen::MatrixXd::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  void accumulate(Var v, const Eigen::MatrixXd& g) {
    Node& n = nodes_[static_cast<std::size_t>(v.id)];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  /// Seeds d(out)/d(out) = 1 for a 1x1 output and sweeps the tape backwards.
  void backward(Var out) {
    if (value(out).size() != 1) throw Error(ErrorCode::ShapeMismatch, "backward needs a scalar output");
    for (auto& n : nodes_) n.grad.resize(0, 0);
    nodes_[static_cast<std::size_t>(out.id)].grad = Eigen::MatrixXd::Ones(1, 1);
    for (int i = out.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.backward && n.grad.size() != 0) n.backward(*this, n.grad);
    }
  }

  /// Records an op. `inputs` decide whether the result needs an adjoint.
  Var op(Eigen::MatrixXd value, std::span<const Var> inputs, Backward fn) {
    bool needs = false;
    for (Var v : inputs) needs = needs || requires_grad(v);
    return push(std::move(value), needs, needs ? std::move(fn) : nullptr);
  }

  Var op(Eigen::MatrixXd value, std::initializer_list<Var> inputs, Backward fn) {
    return op(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(fn));
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Eigen::MatrixXd value;
    Eigen::MatrixXd grad;
    bool requires_grad = false;
    Backward backward;
  };

  Var push(Eigen::MatrixXd v, bool requires_grad, Backward fn) {
    nodes_.push_back(Node{std::move(v), Eigen::MatrixXd(), requires_grad, std::move(fn)});
    return Var{this, static_cast<int>(nodes_.size()) - 1};
  }

  std::vector<Node> nodes_;
};

inline const Eigen::MatrixXd& Var::value() const { return tape->value(*this); }

inline Var matmul(Var a, Var b) {
  if (a.cols() != b.rows()) throw Error(ErrorCode::ShapeMismatch, "matmul");
  return a.tape->op(a.value() * b.value(), {a, b}, [a, b](Tape& t, const Eigen::MatrixXd& g) {
    if (t.requires_grad(a)) t.accumulate(a, g * b.value().transpose());
    if (t.requires_grad(b)) t.accumulate(b, a.value().transpose() * g);
  });
}

inline Var transpose(Var a) {
  return a.tape->op(a.value().transpose(), {a},
                    [a](Tape& t, const Eigen::MatrixXd& g) { t.accumulate(a, g.transpose()); });
}

inline Var add(Var a, Var b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw Error(ErrorCode::ShapeMismatch, "add");
  return a.tape->op(a.value() + b.value(), {a, b}, [a, b](Tape& t, const Eigen::MatrixXd& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

inline Var scale(Var a, double s) {
  return a.tape->op(a.value() * s, {a}, [a, s](Tape& t, const Eigen::MatrixXd& g) { t.accumulate(a, g * s); });
}

/// Elementwise product with a constant matrix.
inline Var hadamard(Var a, Eigen::MatrixXd c) {
  if (a.rows() != c.rows() || a.cols() != c.cols()) throw Error(ErrorCode::ShapeMismatch, "hadamard");
  Eigen::MatrixXd v = a.value().cwiseProduct(c);
  return a.tape->op(std::move(v), {a},
                    [a, c = std::move(c)](Tape& t, const Eigen::MatrixXd& g) { t.accumulate(a, g.cwiseProduct(c)); });
}

inline Var relu(Var a) {
  return a.tape->op(a.value().cwiseMax(0.0), {a}, [a](Tape& t, const Eigen::MatrixXd& g) {
    t.accumulate(a, (a.value().array() > 0.0).select(g, 0.0));
  });
}

inline Var softmax_rows(Var a) {
  Eigen::MatrixXd y(a.rows(), a.cols());
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    const double mx = a.value().row(i).maxCoeff();
    y.row(i) = (a.value().row(i).array() - mx).exp().matrix();
    y.row(i) /= y.row(i).sum();
  }
  return a.tape->op(y, {a}, [a, y](Tape& t, const Eigen::MatrixXd& g) {
    const Eigen::VectorXd dot = g.cwiseProduct(y).rowwise().sum();
    t.accumulate(a, y.cwiseProduct(g - dot.replicate(1, g.cols())));
  });
}

/// Divides each row by its sum; rows summing to zero become zero.
inline Var normalize_rows_l1(Var a) {
  const Eigen::VectorXd s = a.value().rowwise().sum();
  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(a.rows(), a.cols());
  for (Eigen::Index i = 0; i < y.rows(); ++i)
    if (s(i) != 0.0) y.row(i) = a.value().row(i) / s(i);
  return a.tape->op(std::move(y), {a}, [a, s](Tape& t, const Eigen::MatrixXd& g) {
    Eigen::MatrixXd ga = Eigen::MatrixXd::Zero(g.rows(), g.cols());
    for (Eigen::Index i = 0; i < g.rows(); ++i) {
      if (s(i) == 0.0) continue;
      const double gy = g.row(i).dot(a.value().row(i));
      ga.row(i) = (g.row(i).array() / s(i) - gy / (s(i) * s(i))).matrix();
    }
    t.accumulate(a, ga);
  });
}

/// Divides each row by its Euclidean norm; zero rows stay zero.
inline Var normalize_rows_l2(Var a) {
  const Eigen::VectorXd n = a.value().rowwise().norm();
  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(a.rows(), a.cols());
  for (Eigen::Index i = 0; i < y.rows(); ++i)
    if (n(i) > 0.0) y.row(i) = a.value().row(i) / n(i);
  return a.tape->op(y, {a}, [a, n, y](Tape& t, const Eigen::MatrixXd& g) {
    Eigen::MatrixXd ga = Eigen::MatrixXd::Zero(g.rows(), g.cols());
    for (Eigen::Index i = 0; i < g.rows(); ++i) {
      if (!(n(i) > 0.0)) continue;
      ga.row(i) = (g.row(i) - y.row(i) * y.row(i).dot(g.row(i))) / n(i);
    }
    t.accumulate(a, ga);
  });
}

/// out_i = (w_i · v) / sum(w_i); rows of w summing to zero give zero rows.
inline Var row_weighted_mean(Var w, Var v) {
  if (w.cols() != v.rows()) throw Error(ErrorCode::ShapeMismatch, "row_weighted_mean");
  const Eigen::VectorXd s = w.value().rowwise().sum();
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(w.rows(), w.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    if (s(i) != 0.0) a.row(i) = w.value().row(i) / s(i);
  Eigen::MatrixXd out = a * v.value();
  return w.tape->op(std::move(out), {w, v}, [w, v, s, a](Tape& t, const Eigen::MatrixXd& g) {
    if (t.requires_grad(v)) t.accumulate(v, a.transpose() * g);
    if (t.requires_grad(w)) {
      const Eigen::MatrixXd ga = g * v.value().transpose();
      Eigen::MatrixXd gw = Eigen::MatrixXd::Zero(ga.rows(), ga.cols());
      for (Eigen::Index i = 0; i < ga.rows(); ++i) {
        if (s(i) == 0.0) continue;
        const double dot = ga.row(i).dot(w.value().row(i));
        gw.row(i) = (ga.row(i).array() / s(i) - dot / (s(i) * s(i))).matrix();
      }
      t.accumulate(w, gw);
    }
  });
}

/// Row-major reshape of a vector (column or row) into rows x cols.
inline Var reshape_rows(Var a, Eigen::Index rows, Eigen::Index cols) {
  if (a.value().size() != rows * cols) throw Error(ErrorCode::ShapeMismatch, "reshape");
  const Eigen::Index in_rows = a.rows();
  const Eigen::Index in_cols = a.cols();
  Eigen::MatrixXd out(rows, cols);
  const Eigen::MatrixXd& v = a.value();
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) {
      const Eigen::Index k = r * cols + c;
      out(r, c) = v(k / in_cols, k % in_cols);
    }
  return a.tape->op(std::move(out), {a}, [a, rows, cols, in_rows, in_cols](Tape& t, const Eigen::MatrixXd& g) {
    Eigen::MatrixXd ga(in_rows, in_cols);
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) {
        const Eigen::Index k = r * cols + c;
        ga(k / in_cols, k % in_cols) = g(r, c);
      }
    t.accumulate(a, ga);
  });
}

inline Var concat_cols(Var a, Var b) {
  if (a.rows() != b.rows()) throw Error(ErrorCode::ShapeMismatch, "concat_cols");
  Eigen::MatrixXd out(a.rows(), a.cols() + b.cols());
  out << a.value(), b.value();
  const Eigen::Index ca = a.cols();
  const Eigen::Index cb = b.cols();
  return a.tape->op(std::move(out), {a, b}, [a, b, ca, cb](Tape& t, const Eigen::MatrixXd& g) {
    t.accumulate(a, g.leftCols(ca));
    t.accumulate(b, g.rightCols(cb));
  });
}

/// Stacks a single row n times.
inline Var repeat_row(Var a, Eigen::Index n) {
  if (a.rows() != 1) throw Error(ErrorCode::ShapeMismatch, "repeat_row expects one row");
  return a.tape->op(a.value().replicate(n, 1), {a},
                    [a](Tape& t, const Eigen::MatrixXd& g) { t.accumulate(a, g.colwise().sum()); });
}

inline Var gather_rows(Var a, std::vector<int> idx) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), a.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = a.value().row(idx[r]);
  return a.tape->op(std::move(out), {a}, [a, idx = std::move(idx)](Tape& t, const Eigen::MatrixXd& g) {
    Eigen::MatrixXd ga = Eigen::MatrixXd::Zero(a.rows(), a.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) ga.row(idx[r]) += g.row(static_cast<Eigen::Index>(r));
    t.accumulate(a, ga);
  });
}

inline Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw Error(ErrorCode::ShapeMismatch, "concat_rows of nothing");
  Eigen::Index rows = 0;
  for (const auto& p : parts) rows += p.rows();
  Eigen::MatrixXd out(rows, parts.front().cols());
  std::vector<Eigen::Index> offsets;
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    if (p.cols() != out.cols()) throw Error(ErrorCode::ShapeMismatch, "concat_rows");
    offsets.push_back(r);
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  return parts.front().tape->op(std::move(out), std::span<const Var>(parts), [parts, offsets](Tape& t, const Eigen::MatrixXd& g) {
    for (std::size_t i = 0; i < parts.size(); ++i) t.accumulate(parts[i], g.middleRows(offsets[i], parts[i].rows()));
  });
}

inline Var sum(Var a) {
  Eigen::MatrixXd out(1, 1);
  out(0, 0) = a.value().sum();
  const Eigen::Index r = a.rows();
  const Eigen::Index c = a.cols();
  return a.tape->op(std::move(out), {a}, [a, r, c](Tape& t, const Eigen::MatrixXd& g) {
    t.accumulate(a, Eigen::MatrixXd::Constant(r, c, g(0, 0)));
  });
}

/// Sum of (a - target)^2 over the entries where target is nonzero.
inline Var masked_squared_error(Var a, const Eigen::MatrixXd& target) {
  if (a.rows() != target.rows() || a.cols() != target.cols()) throw Error(ErrorCode::ShapeMismatch, "masked error");
  const Eigen::MatrixXd diff = (target.array() != 0.0).select(a.value() - target, 0.0);
  Eigen::MatrixXd out(1, 1);
  out(0, 0) = diff.squaredNorm();
  return a.tape->op(std::move(out), {a},
                    [a, diff](Tape& t, const Eigen::MatrixXd& g) { t.accumulate(a, 2.0 * g(0, 0) * diff); });
}

/// Scaled dot-product attention, softmax(q kᵀ / sqrt(d)) v with d = q.cols().
inline Var attention(Var q, Var k, Var v) {
  const double s = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  return matmul(softmax_rows(scale(matmul(q, transpose(k)), s)), v);
}

}  // namespace hgi2p::ad
