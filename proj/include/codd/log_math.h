#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>

namespace codd {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// log(exp(a) + exp(b)) without overflow; -inf is the additive identity.
inline double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  if (a < b) std::swap(a, b);
  return a + std::log1p(std::exp(b - a));
}

// Max-shifted log-sum-exp. Empty or all -inf input returns -inf.
inline double log_sum_exp(std::span<const double> xs) {
  double m = kNegInf;
  for (double x : xs) m = std::max(m, x);
  if (m == kNegInf) return kNegInf;
  double acc = 0.0;
  for (double x : xs) acc += std::exp(x - m);
  return m + std::log(acc);
}

// Normalizes log-values in place so that they exponentiate to 1.
// Returns the log normalizer that was subtracted.
inline double log_normalize(std::span<double> xs) {
  const double z = log_sum_exp(xs);
  if (z == kNegInf) return z;
  for (double& x : xs) x -= z;
  return z;
}

// Entropy in nats of a probability vector.
inline double entropy(std::span<const double> probs) {
  double h = 0.0;
  for (double p : probs)
    if (p > 0.0) h -= p * std::log(p);
  return h;
}

}  // namespace codd
