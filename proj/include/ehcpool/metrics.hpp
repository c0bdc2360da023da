#ifndef EHCPOOL_METRICS_HPP
#define EHCPOOL_METRICS_HPP

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

namespace ehcpool {

/// Binary classification metrics. A ratio whose denominator is zero is
/// reported as 0 and flagged in `degenerate`.
struct Metrics {
  std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;
  double acc = 0.0, sen = 0.0, spe = 0.0, f1 = 0.0;

  struct Degenerate {
    bool acc = false, sen = false, spe = false, precision = false, f1 = false;
  } degenerate;

  std::int64_t total() const { return tp + fp + tn + fn; }

  static Metrics from_counts(std::int64_t tp, std::int64_t fp, std::int64_t tn, std::int64_t fn) {
    Metrics m;
    m.tp = tp;
    m.fp = fp;
    m.tn = tn;
    m.fn = fn;
    auto ratio = [](double num, double den, bool& flag) {
      if (den == 0.0) {
        flag = true;
        return 0.0;
      }
      return num / den;
    };
    const auto d = [](std::int64_t v) { return static_cast<double>(v); };
    m.acc = ratio(d(tp + tn), d(tp + tn + fp + fn), m.degenerate.acc);
    m.sen = ratio(d(tp), d(tp + fn), m.degenerate.sen);
    m.spe = ratio(d(tn), d(tn + fp), m.degenerate.spe);
    const double precision = ratio(d(tp), d(tp + fp), m.degenerate.precision);
    m.f1 = ratio(2.0 * precision * m.sen, precision + m.sen, m.degenerate.f1);
    return m;
  }

  /// Predictions are positive when the logit is > 0.
  static Metrics from_logits(std::span<const double> logits, std::span<const int> labels) {
    std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;
    for (std::size_t k = 0; k < logits.size(); ++k) {
      const bool pred = logits[k] > 0.0;
      const bool truth = labels[k] == 1;
      if (pred && truth) ++tp;
      else if (pred) ++fp;
      else if (truth) ++fn;
      else ++tn;
    }
    return from_counts(tp, fp, tn, fn);
  }
};

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
};

inline MeanStd mean_std(std::span<const double> v) {
  MeanStd r;
  if (v.empty()) return r;
  for (double x : v) r.mean += x;
  r.mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - r.mean) * (x - r.mean);
  r.std = std::sqrt(ss / static_cast<double>(v.size()));
  return r;
}

/// Wilson score interval for a binomial proportion.
struct Interval {
  double lo = 0.0;
  double hi = 1.0;
  bool contains(double p) const { return lo <= p && p <= hi; }
};

inline Interval wilson_interval(std::int64_t successes, std::int64_t trials, double z = 1.959963984540054) {
  if (trials <= 0) return {};
  const double n = static_cast<double>(trials);
  const double p = static_cast<double>(successes) / n;
  const double denom = 1.0 + z * z / n;
  const double centre = (p + z * z / (2.0 * n)) / denom;
  const double half = z * std::sqrt(p * (1.0 - p) / n + z * z / (4.0 * n * n)) / denom;
  return {centre - half, centre + half};
}

}  // namespace ehcpool

#endif  // EHCPOOL_METRICS_HPP
