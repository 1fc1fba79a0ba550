#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>

namespace dcorsel {

/// Summary of a fitted model's accuracy.
struct Metrics {
  double rmspe = 0.0;
  double deviance_explained = 0.0;
  double residual_sd = 0.0;
  double misclassification_rate = 0.0;
};

/// Root mean squared prediction error over one held-out sample.
inline double rmspe(std::span<const double> y_true, std::span<const double> y_pred) {
  if (y_true.empty()) throw std::invalid_argument("rmspe: empty input");
  if (y_true.size() != y_pred.size()) throw std::invalid_argument("rmspe: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    const double d = y_true[i] - y_pred[i];
    s += d * d;
  }
  return std::sqrt(s / static_cast<double>(y_true.size()));
}

/// Fraction of 0/1 labels whose predicted probability falls on the wrong side of 1/2.
inline double misclassification_rate(std::span<const double> labels, std::span<const double> prob) {
  if (labels.empty()) throw std::invalid_argument("misclassification_rate: empty input");
  if (labels.size() != prob.size()) throw std::invalid_argument("misclassification_rate: length mismatch");
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if ((prob[i] > 0.5) != (labels[i] > 0.5)) ++wrong;
  return static_cast<double>(wrong) / static_cast<double>(labels.size());
}

inline double mean(std::span<const double> v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

/// Sample standard deviation (divisor n - 1).
inline double sample_sd(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace dcorsel
