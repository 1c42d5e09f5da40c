#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>

namespace lip3d {

inline double stable_sigmoid(double x) {
  double s;
  if (x >= 0.0) {
    s = 1.0 / (1.0 + std::exp(-x));
  } else {
    const double e = std::exp(x);
    s = e / (1.0 + e);
  }
  s = std::min(s, 1.0 - 0x1.0p-53);
  s = std::max(s, std::numeric_limits<double>::min());
  return s;
}

// Neumaier compensated sum; deterministic left-to-right order.
inline double compensated_sum(std::span<const double> v) {
  double sum = 0.0, comp = 0.0;
  for (double x : v) {
    const double t = sum + x;
    if (std::abs(sum) >= std::abs(x)) {
      comp += (sum - t) + x;
    } else {
      comp += (x - t) + sum;
    }
    sum = t;
  }
  return sum + comp;
}

inline double mean(std::span<const double> v) {
  return v.empty() ? 0.0 : compensated_sum(v) / static_cast<double>(v.size());
}

// Population standard deviation (divides by N).
inline double population_std(std::span<const double> v) {
  if (v.empty()) return 0.0;
  const double m = mean(v);
  double acc = 0.0, comp = 0.0;
  for (double x : v) {
    const double d = (x - m) * (x - m);
    const double t = acc + d;
    comp += (std::abs(acc) >= d) ? (acc - t) + d : (d - t) + acc;
    acc = t;
  }
  return std::sqrt((acc + comp) / static_cast<double>(v.size()));
}

}  // namespace lip3d
