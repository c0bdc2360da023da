#ifndef EHCPOOL_GRAD_CHECK_HPP
#define EHCPOOL_GRAD_CHECK_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "ehcpool/autodiff.hpp"

namespace ehcpool::ad {

struct TensorGradError {
  std::string name;
  double max_rel_error = 0.0;
  double max_abs_analytic = 0.0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::vector<TensorGradError> per_tensor;
};

/// |a − n| / max(1e-6, |a| + |n|). Below the floor the check is absolute:
/// central differences at h = 1e-5 carry about 1e-11 of roundoff.
inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1e-6, std::abs(analytic) + std::abs(numeric));
}

/// Compares reverse-mode gradients of `loss` with central differences
/// (f(p+h) − f(p−h)) / 2h, entry by entry over every tensor in `params`.
/// `loss` records a fresh computation on the tape it is given and returns
/// the scalar loss node.
inline GradCheckReport grad_check(const std::function<Var(Tape&)>& loss, const std::vector<Tensor*>& params,
                                  double h = 1e-5) {
  for (Tensor* p : params) p->zero_grad();
  {
    Tape tape;
    Var l = loss(tape);
    tape.backward(l);
  }
  auto evaluate = [&] {
    Tape tape;
    return loss(tape).scalar();
  };
  GradCheckReport report;
  for (Tensor* p : params) {
    TensorGradError entry{p->name, 0.0, 0.0};
    const Matrix analytic = p->grad;
    for (Index k = 0; k < p->value.size(); ++k) {
      double& slot = p->value.data()[k];
      const double saved = slot;
      slot = saved + h;
      const double up = evaluate();
      slot = saved - h;
      const double down = evaluate();
      slot = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic.data()[k];
      entry.max_rel_error = std::max(entry.max_rel_error, relative_error(a, numeric));
      entry.max_abs_analytic = std::max(entry.max_abs_analytic, std::abs(a));
    }
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.per_tensor.push_back(std::move(entry));
  }
  return report;
}

}  // namespace ehcpool::ad

#endif  // EHCPOOL_GRAD_CHECK_HPP
