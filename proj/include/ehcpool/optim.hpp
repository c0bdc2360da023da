#ifndef EHCPOOL_OPTIM_HPP
#define EHCPOOL_OPTIM_HPP

#include <cmath>
#include <cstdint>
#include <vector>

#include "ehcpool/autodiff.hpp"

namespace ehcpool::ad {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam (Kingma & Ba) with bias-corrected moments. One moment pair per
/// parameter, in the order the parameters were registered.
class AdamState {
 public:
  AdamState(std::vector<Tensor*> params, AdamOptions options = {})
      : params_(std::move(params)), options_(options) {
    for (const Tensor* p : params_) {
      m_.push_back(Matrix::Zero(p->rows(), p->cols()));
      v_.push_back(Matrix::Zero(p->rows(), p->cols()));
    }
  }

  std::int64_t step_count() const { return t_; }
  const AdamOptions& options() const { return options_; }
  const std::vector<Tensor*>& params() const { return params_; }
  const Matrix& first_moment(std::size_t k) const { return m_[k]; }
  const Matrix& second_moment(std::size_t k) const { return v_[k]; }

  /// p ← p − lr · m̂ / (√v̂ + eps), using each parameter's current grad.
  void step() {
    for (std::size_t k = 0; k < params_.size(); ++k) {
      const Tensor& p = *params_[k];
      if (p.grad.rows() != p.rows() || p.grad.cols() != p.cols()) {
        throw AutodiffError(AutodiffError::Kind::ShapeMismatch, "adam: gradient shape differs for " + p.name);
      }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      Tensor& p = *params_[k];
      if (!p.requires_grad) continue;
      m_[k] = options_.beta1 * m_[k] + (1.0 - options_.beta1) * p.grad;
      v_[k] = options_.beta2 * v_[k] + (1.0 - options_.beta2) * p.grad.cwiseAbs2();
      const auto m_hat = m_[k].array() / c1;
      const auto v_hat = v_[k].array() / c2;
      p.value.array() -= options_.lr * m_hat / (v_hat.sqrt() + options_.eps);
    }
  }

  void zero_grad() {
    for (Tensor* p : params_) p->zero_grad();
  }

 private:
  std::vector<Tensor*> params_;
  AdamOptions options_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  std::int64_t t_ = 0;
};

inline void adam_step(AdamState& state) { state.step(); }

}  // namespace ehcpool::ad

#endif  // EHCPOOL_OPTIM_HPP
