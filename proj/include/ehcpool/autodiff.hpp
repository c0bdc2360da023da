#ifndef EHCPOOL_AUTODIFF_HPP
#define EHCPOOL_AUTODIFF_HPP

// Minimal tape-based reverse-mode differentiation over dense row-major
// matrices. Forward evaluation is eager: every primitive computes its value
// immediately and records a closure that maps the output adjoint onto the
// adjoints of its inputs. Tape::backward replays the closures in reverse.

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ehcpool/graph.hpp"

namespace ehcpool::ad {

using ehcpool::Matrix;
using Index = Eigen::Index;

class AutodiffError : public std::runtime_error {
 public:
  enum class Kind { ShapeMismatch, NotScalar, NonFinite, ForeignTape };

  AutodiffError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

/// A named tensor that lives outside any tape: learnable parameters and
/// their accumulated gradients.
struct Tensor {
  std::string name;
  Matrix value;
  Matrix grad;
  bool requires_grad = true;

  Tensor() = default;
  Tensor(std::string n, Matrix v, bool trainable = true)
      : name(std::move(n)), value(std::move(v)), requires_grad(trainable) {
    zero_grad();
  }

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
  Index rows() const { return value.rows(); }
  Index cols() const { return value.cols(); }
};

class Tape;

/// Handle to a value recorded on a tape.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
  bool requires_grad() const;
  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  /// Receives the adjoint of the node's output; must route it to inputs
  /// through Tape::accumulate.
  using BackwardFn = std::function<void(Tape&, const Matrix&)>;

#ifdef NDEBUG
  static constexpr bool kCheckFiniteDefault = false;
#else
  static constexpr bool kCheckFiniteDefault = true;
#endif

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void set_check_finite(bool on) { check_finite_ = on; }

  Var constant(Matrix value) { return push(std::move(value), false, nullptr); }

  /// Registers a parameter; repeated calls return the same node so fan-out
  /// accumulates inside the tape before reaching the parameter.
  Var leaf(Tensor& t) {
    if (auto it = leaves_.find(&t); it != leaves_.end()) return Var(this, it->second);
    Var v = push(t.value, t.requires_grad, nullptr);
    nodes_[v.id_].leaf = &t;
    leaves_.emplace(&t, v.id_);
    return v;
  }

  Var record(Matrix value, std::initializer_list<Var> inputs, BackwardFn fn) {
    bool needs = false;
    for (const Var& in : inputs) {
      if (in.tape_ != this) throw AutodiffError(AutodiffError::Kind::ForeignTape, "input recorded on another tape");
      needs = needs || nodes_[in.id_].requires_grad;
    }
    return push(std::move(value), needs, needs ? std::move(fn) : BackwardFn{});
  }

  template <typename Range>
  Var record_many(Matrix value, const Range& inputs, BackwardFn fn) {
    bool needs = false;
    for (const Var& in : inputs) {
      if (in.tape_ != this) throw AutodiffError(AutodiffError::Kind::ForeignTape, "input recorded on another tape");
      needs = needs || nodes_[in.id_].requires_grad;
    }
    return push(std::move(value), needs, needs ? std::move(fn) : BackwardFn{});
  }

  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  template <typename Derived>
  void accumulate(const Var& v, const Eigen::MatrixBase<Derived>& g) {
    Node& node = nodes_[v.id_];
    if (!node.requires_grad) return;
    if (node.grad.size() == 0) {
      node.grad = g;
    } else {
      node.grad += g;
    }
  }

  /// Adjoint of a node after backward(); zero if the node was not reached.
  Matrix grad(const Var& v) const {
    const Node& node = nodes_[v.id_];
    if (node.grad.size() == 0) return Matrix::Zero(node.value.rows(), node.value.cols());
    return node.grad;
  }

  /// Propagates d(loss)/d(node) to every reachable node, then adds the
  /// leaf adjoints into their Tensor::grad.
  void backward(const Var& loss) {
    if (loss.tape_ != this) throw AutodiffError(AutodiffError::Kind::ForeignTape, "loss recorded on another tape");
    if (loss.value().size() != 1) {
      throw AutodiffError(AutodiffError::Kind::NotScalar,
                          "backward needs a scalar loss, got " + std::to_string(loss.rows()) + "x" +
                              std::to_string(loss.cols()));
    }
    if (!nodes_[loss.id_].requires_grad) return;
    nodes_[loss.id_].grad = Matrix::Ones(1, 1);
    for (std::size_t i = loss.id_ + 1; i-- > 0;) {
      Node& node = nodes_[i];
      if (!node.requires_grad || node.grad.size() == 0) continue;
      if (node.fn) node.fn(*this, node.grad);
      if (node.leaf != nullptr) {
        if (node.leaf->grad.rows() != node.grad.rows() || node.leaf->grad.cols() != node.grad.cols()) {
          node.leaf->zero_grad();
        }
        node.leaf->grad += node.grad;
      }
    }
  }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    BackwardFn fn;
    Tensor* leaf = nullptr;
    bool requires_grad = false;
  };

  Var push(Matrix value, bool requires_grad, BackwardFn fn) {
    if (check_finite_ && !value.allFinite()) {
      throw AutodiffError(AutodiffError::Kind::NonFinite,
                          "non-finite value produced at tape node " + std::to_string(nodes_.size()));
    }
    nodes_.push_back(Node{std::move(value), Matrix(), std::move(fn), nullptr, requires_grad});
    return Var(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
  std::unordered_map<const Tensor*, std::size_t> leaves_;
  bool check_finite_ = kCheckFiniteDefault;
};

inline const Matrix& Var::value() const { return tape_->value(id_); }
inline bool Var::requires_grad() const { return tape_->requires_grad(id_); }

namespace detail {

[[noreturn]] inline void shape_error(const char* op, const Var& a, const Var& b) {
  throw AutodiffError(AutodiffError::Kind::ShapeMismatch,
                      std::string(op) + ": " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                          " vs " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
}

inline void same_shape(const char* op, const Var& a, const Var& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_error(op, a, b);
}

inline void check_rows(const char* op, std::span<const int> idx, Index rows) {
  for (int r : idx) {
    if (r < 0 || r >= rows) {
      throw AutodiffError(AutodiffError::Kind::ShapeMismatch,
                          std::string(op) + ": row index " + std::to_string(r) + " out of range");
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Primitives
// ---------------------------------------------------------------------------

inline Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) detail::shape_error("matmul", a, b);
  Matrix out = a.value() * b.value();
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (a.requires_grad()) t.accumulate(a, g * b.value().transpose());
    if (b.requires_grad()) t.accumulate(b, a.value().transpose() * g);
  });
}

inline Var add(const Var& a, const Var& b) {
  detail::same_shape("add", a, b);
  Matrix out = a.value() + b.value();
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

/// x + 1·bias, with a 1×c bias broadcast over the rows of x.
inline Var add_bias(const Var& x, const Var& bias) {
  if (bias.rows() != 1 || bias.cols() != x.cols()) detail::shape_error("add_bias", x, bias);
  Matrix out = x.value().rowwise() + bias.value().row(0);
  return x.tape()->record(std::move(out), {x, bias}, [x, bias](Tape& t, const Matrix& g) {
    t.accumulate(x, g);
    if (bias.requires_grad()) t.accumulate(bias, g.colwise().sum());
  });
}

inline Var elementwise_mul(const Var& a, const Var& b) {
  detail::same_shape("elementwise_mul", a, b);
  Matrix out = a.value().cwiseProduct(b.value());
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (a.requires_grad()) t.accumulate(a, g.cwiseProduct(b.value()));
    if (b.requires_grad()) t.accumulate(b, g.cwiseProduct(a.value()));
  });
}

inline Var scalar_mul(const Var& a, double s) {
  Matrix out = a.value() * s;
  return a.tape()->record(std::move(out), {a}, [a, s](Tape& t, const Matrix& g) { t.accumulate(a, g * s); });
}

/// Row-wise gate: out(i,:) = x(i,:) * s(i) for a column s with one entry per row.
inline Var mul_rows(const Var& x, const Var& s) {
  if (s.cols() != 1 || s.rows() != x.rows()) detail::shape_error("mul_rows", x, s);
  Matrix out = x.value().array().colwise() * s.value().col(0).array();
  return x.tape()->record(std::move(out), {x, s}, [x, s](Tape& t, const Matrix& g) {
    if (x.requires_grad()) {
      Matrix gx = g.array().colwise() * s.value().col(0).array();
      t.accumulate(x, gx);
    }
    if (s.requires_grad()) t.accumulate(s, g.cwiseProduct(x.value()).rowwise().sum());
  });
}

/// x / s for a 1×1 s.
inline Var div_scalar(const Var& x, const Var& s) {
  if (s.rows() != 1 || s.cols() != 1) detail::shape_error("div_scalar", x, s);
  const double d = s.scalar();
  Matrix out = x.value() / d;
  return x.tape()->record(std::move(out), {x, s}, [x, s, d](Tape& t, const Matrix& g) {
    if (x.requires_grad()) t.accumulate(x, g / d);
    if (s.requires_grad()) {
      Matrix gs(1, 1);
      gs(0, 0) = -g.cwiseProduct(x.value()).sum() / (d * d);
      t.accumulate(s, gs);
    }
  });
}

inline double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Var sigmoid(const Var& x) {
  Matrix out = x.value().unaryExpr([](double v) { return sigmoid_scalar(v); });
  Matrix slope = out.array() * (1.0 - out.array());
  return x.tape()->record(std::move(out), {x}, [x, slope = std::move(slope)](Tape& t, const Matrix& g) {
    t.accumulate(x, g.cwiseProduct(slope));
  });
}

/// ReLU with subgradient 0 at the kink.
inline Var relu(const Var& x) {
  Matrix out = x.value().cwiseMax(0.0);
  return x.tape()->record(std::move(out), {x}, [x](Tape& t, const Matrix& g) {
    Matrix gx = (x.value().array() > 0.0).select(g.array(), 0.0);
    t.accumulate(x, gx);
  });
}

/// Column sums: r×c -> 1×c.
inline Var sum_rows(const Var& x) {
  Matrix out = x.value().colwise().sum();
  const Index r = x.rows();
  return x.tape()->record(std::move(out), {x}, [x, r](Tape& t, const Matrix& g) {
    t.accumulate(x, g.replicate(r, 1));
  });
}

/// Sum of all entries: -> 1×1.
inline Var sum(const Var& x) {
  Matrix out(1, 1);
  out(0, 0) = x.value().sum();
  return x.tape()->record(std::move(out), {x}, [x](Tape& t, const Matrix& g) {
    t.accumulate(x, Matrix::Constant(x.rows(), x.cols(), g(0, 0)));
  });
}

inline Var gather_rows(const Var& x, std::vector<int> idx) {
  detail::check_rows("gather_rows", idx, x.rows());
  Matrix out(static_cast<Index>(idx.size()), x.cols());
  for (std::size_t k = 0; k < idx.size(); ++k) out.row(static_cast<Index>(k)) = x.value().row(idx[k]);
  return x.tape()->record(std::move(out), {x}, [x, idx = std::move(idx)](Tape& t, const Matrix& g) {
    Matrix gx = Matrix::Zero(x.rows(), x.cols());
    for (std::size_t k = 0; k < idx.size(); ++k) gx.row(idx[k]) += g.row(static_cast<Index>(k));
    t.accumulate(x, gx);
  });
}

/// out(dst[k],:) += coef[k] * x(k,:), with out of shape out_rows × cols.
/// An empty coef means all ones.
inline Var scatter_add_rows(const Var& x, std::vector<int> dst, Index out_rows, std::vector<double> coef = {}) {
  if (static_cast<Index>(dst.size()) != x.rows() || (!coef.empty() && coef.size() != dst.size())) {
    throw AutodiffError(AutodiffError::Kind::ShapeMismatch, "scatter_add_rows: index count != rows");
  }
  detail::check_rows("scatter_add_rows", dst, out_rows);
  Matrix out = Matrix::Zero(out_rows, x.cols());
  for (std::size_t k = 0; k < dst.size(); ++k) {
    const double c = coef.empty() ? 1.0 : coef[k];
    out.row(dst[k]) += c * x.value().row(static_cast<Index>(k));
  }
  return x.tape()->record(std::move(out), {x},
                          [x, dst = std::move(dst), coef = std::move(coef)](Tape& t, const Matrix& g) {
                            Matrix gx(x.rows(), x.cols());
                            for (std::size_t k = 0; k < dst.size(); ++k) {
                              const double c = coef.empty() ? 1.0 : coef[k];
                              gx.row(static_cast<Index>(k)) = c * g.row(dst[k]);
                            }
                            t.accumulate(x, gx);
                          });
}

inline Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw AutodiffError(AutodiffError::Kind::ShapeMismatch, "concat_rows: no inputs");
  const Index cols = parts.front().cols();
  Index rows = 0;
  for (const Var& p : parts) {
    if (p.cols() != cols) detail::shape_error("concat_rows", parts.front(), p);
    rows += p.rows();
  }
  Matrix out(rows, cols);
  Index r = 0;
  for (const Var& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  return parts.front().tape()->record_many(std::move(out), parts, [parts](Tape& t, const Matrix& g) {
    Index r0 = 0;
    for (const Var& p : parts) {
      if (p.requires_grad()) t.accumulate(p, g.middleRows(r0, p.rows()));
      r0 += p.rows();
    }
  });
}

/// Row-major reshape; element order is preserved.
inline Var reshape(const Var& x, Index rows, Index cols) {
  if (rows * cols != x.value().size()) {
    throw AutodiffError(AutodiffError::Kind::ShapeMismatch, "reshape: element count changes");
  }
  Matrix out = Eigen::Map<const Matrix>(x.value().data(), rows, cols);
  return x.tape()->record(std::move(out), {x}, [x](Tape& t, const Matrix& g) {
    t.accumulate(x, Eigen::Map<const Matrix>(g.data(), x.rows(), x.cols()));
  });
}

/// Euclidean norm of all entries as a 1×1, floored at `eps` so it can be
/// used as a denominator. Below the floor the derivative is zero.
inline Var l2_norm(const Var& v, double eps = 1e-12) {
  if (v.value().size() == 0) throw AutodiffError(AutodiffError::Kind::ShapeMismatch, "l2_norm of empty tensor");
  const double norm = v.value().norm();
  Matrix out(1, 1);
  out(0, 0) = std::max(norm, eps);
  return v.tape()->record(std::move(out), {v}, [v, norm, eps](Tape& t, const Matrix& g) {
    if (norm <= eps) return;
    t.accumulate(v, v.value() * (g(0, 0) / norm));
  });
}

/// One message per directed incidence: out(dst,:) += coef · W_e · x(src,:)ᵀ,
/// where row e of `weights` holds an out_dim × in_dim matrix in row-major
/// order and in_dim = x.cols().
struct Message {
  int edge = 0;
  int src = 0;
  int dst = 0;
  double coef = 1.0;
};

inline Var edge_conditioned_sum(const Var& weights, const Var& x, std::vector<Message> messages, Index out_rows) {
  const Index in_dim = x.cols();
  if (in_dim == 0 || weights.cols() % in_dim != 0) detail::shape_error("edge_conditioned_sum", weights, x);
  const Index out_dim = weights.cols() / in_dim;
  for (const Message& m : messages) {
    if (m.edge < 0 || m.edge >= weights.rows() || m.src < 0 || m.src >= x.rows() || m.dst < 0 ||
        m.dst >= out_rows) {
      throw AutodiffError(AutodiffError::Kind::ShapeMismatch, "edge_conditioned_sum: message index out of range");
    }
  }
  using RowMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  Matrix out = Matrix::Zero(out_rows, out_dim);
  const Matrix& w = weights.value();
  const Matrix& xv = x.value();
  for (const Message& m : messages) {
    RowMap wm(w.row(m.edge).data(), out_dim, in_dim);
    out.row(m.dst).noalias() += m.coef * (wm * xv.row(m.src).transpose()).transpose();
  }
  return x.tape()->record(
      std::move(out), {weights, x},
      [weights, x, messages = std::move(messages), in_dim, out_dim](Tape& t, const Matrix& g) {
        const Matrix& w = weights.value();
        const Matrix& xv = x.value();
        if (x.requires_grad()) {
          Matrix gx = Matrix::Zero(x.rows(), x.cols());
          for (const Message& m : messages) {
            RowMap wm(w.row(m.edge).data(), out_dim, in_dim);
            gx.row(m.src).noalias() += m.coef * (g.row(m.dst) * wm);
          }
          t.accumulate(x, gx);
        }
        if (weights.requires_grad()) {
          Matrix gw = Matrix::Zero(weights.rows(), weights.cols());
          for (const Message& m : messages) {
            Eigen::Map<Matrix> gwm(gw.row(m.edge).data(), out_dim, in_dim);
            gwm.noalias() += m.coef * (g.row(m.dst).transpose() * xv.row(m.src));
          }
          t.accumulate(weights, gw);
        }
      });
}

/// Mean binary cross-entropy on logits (one per row), numerically stable form
/// max(z,0) - z·y + log(1 + exp(-|z|)).
inline Var bce_with_logits(const Var& logits, std::vector<double> targets) {
  if (logits.cols() != 1 || static_cast<std::size_t>(logits.rows()) != targets.size() || targets.empty()) {
    throw AutodiffError(AutodiffError::Kind::ShapeMismatch, "bce_with_logits: one logit per target expected");
  }
  const auto count = static_cast<double>(targets.size());
  double total = 0.0;
  for (std::size_t k = 0; k < targets.size(); ++k) {
    const double z = logits.value()(static_cast<Index>(k), 0);
    total += std::max(z, 0.0) - z * targets[k] + std::log1p(std::exp(-std::abs(z)));
  }
  Matrix out(1, 1);
  out(0, 0) = total / count;
  return logits.tape()->record(std::move(out), {logits},
                               [logits, targets = std::move(targets), count](Tape& t, const Matrix& g) {
                                 Matrix gz(logits.rows(), 1);
                                 for (Index k = 0; k < logits.rows(); ++k) {
                                   const double z = logits.value()(k, 0);
                                   gz(k, 0) = g(0, 0) * (sigmoid_scalar(z) - targets[k]) / count;
                                 }
                                 t.accumulate(logits, gz);
                               });
}

// ---------------------------------------------------------------------------
// Batch normalisation
// ---------------------------------------------------------------------------

struct BatchNormState {
  Matrix running_mean;  // 1 × c
  Matrix running_var;   // 1 × c
  double momentum = 0.1;
  double eps = 1e-5;

  explicit BatchNormState(Index channels = 0)
      : running_mean(Matrix::Zero(1, channels)), running_var(Matrix::Ones(1, channels)) {}
};

enum class Mode { Train, Eval };

/// Per-channel normalisation over the row axis. Train mode uses batch
/// statistics (biased variance) and updates the running statistics with the
/// unbiased variance; Eval mode uses the running statistics.
inline Var batch_norm(const Var& x, const Var& scale, const Var& shift, BatchNormState& state, Mode mode) {
  const Index c = x.cols();
  if (scale.rows() != 1 || scale.cols() != c) detail::shape_error("batch_norm", x, scale);
  if (shift.rows() != 1 || shift.cols() != c) detail::shape_error("batch_norm", x, shift);
  if (state.running_mean.cols() != c) detail::shape_error("batch_norm", x, scale);
  const Index r = x.rows();
  Matrix mean;
  Matrix inv_std(1, c);
  if (mode == Mode::Train) {
    if (r == 0) throw AutodiffError(AutodiffError::Kind::ShapeMismatch, "batch_norm on empty batch");
    mean = x.value().colwise().mean();
    Matrix centered = x.value().rowwise() - mean.row(0);
    Matrix var = centered.cwiseAbs2().colwise().sum() / static_cast<double>(r);
    for (Index k = 0; k < c; ++k) inv_std(0, k) = 1.0 / std::sqrt(var(0, k) + state.eps);
    const double unbias = r > 1 ? static_cast<double>(r) / static_cast<double>(r - 1) : 1.0;
    state.running_mean = (1.0 - state.momentum) * state.running_mean + state.momentum * mean;
    state.running_var = (1.0 - state.momentum) * state.running_var + state.momentum * unbias * var;
  } else {
    mean = state.running_mean;
    for (Index k = 0; k < c; ++k) inv_std(0, k) = 1.0 / std::sqrt(state.running_var(0, k) + state.eps);
  }
  Matrix xhat = (x.value().rowwise() - mean.row(0)).array().rowwise() * inv_std.row(0).array();
  Matrix out = (xhat.array().rowwise() * scale.value().row(0).array()).rowwise() + shift.value().row(0).array();
  return x.tape()->record(
      std::move(out), {x, scale, shift},
      [x, scale, shift, xhat = std::move(xhat), inv_std, mode, r](Tape& t, const Matrix& g) {
        if (scale.requires_grad()) t.accumulate(scale, g.cwiseProduct(xhat).colwise().sum());
        if (shift.requires_grad()) t.accumulate(shift, g.colwise().sum());
        if (!x.requires_grad()) return;
        Matrix dxhat = g.array().rowwise() * scale.value().row(0).array();
        if (mode == Mode::Eval) {
          t.accumulate(x, (dxhat.array().rowwise() * inv_std.row(0).array()).matrix());
          return;
        }
        const double n = static_cast<double>(r);
        Matrix sum_d = dxhat.colwise().sum();
        Matrix sum_dx = dxhat.cwiseProduct(xhat).colwise().sum();
        Matrix inner = (n * dxhat).rowwise() - sum_d.row(0);
        inner -= (xhat.array().rowwise() * sum_dx.row(0).array()).matrix();
        Matrix dx = (inner.array().rowwise() * inv_std.row(0).array()) / n;
        t.accumulate(x, dx);
      });
}

}  // namespace ehcpool::ad

#endif  // EHCPOOL_AUTODIFF_HPP
