#pragma once

// Independent reference computations used by the tests. Nothing here goes
// through the tape.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "lmaml/tensor.hpp"

namespace lmaml::testing {

/// Central differences of a scalar function of a flat parameter vector.
inline std::vector<double> central_differences(const std::function<double(const std::vector<double>&)>& f,
                                               std::vector<double> x, double h = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double up = f(x);
    x[i] = saved - h;
    const double down = f(x);
    x[i] = saved;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// max_i |a_i - b_i| / max(|b|_inf, floor)
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b,
                             double floor = 1e-8) {
  double diff = 0.0, scale = floor;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(a[i] - b[i]));
    scale = std::max(scale, std::abs(b[i]));
  }
  return diff / scale;
}

inline std::vector<double> random_values(std::size_t n, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

inline Tensor<double> random_tensor(const Shape& shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  return Tensor<double>(shape, random_values(shape_numel(shape), seed, lo, hi));
}

/// log-sum-exp cross entropy evaluated directly on raw logits.
inline double direct_cross_entropy(const std::vector<double>& logits, std::size_t classes,
                                   const std::vector<std::int32_t>& labels) {
  const std::size_t rows = labels.size();
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = logits.data() + r * classes;
    double m = row[0];
    for (std::size_t c = 1; c < classes; ++c) m = std::max(m, row[c]);
    double s = 0.0;
    for (std::size_t c = 0; c < classes; ++c) s += std::exp(row[c] - m);
    total += (m + std::log(s)) - row[labels[r]];
  }
  return total / static_cast<double>(rows);
}

}  // namespace lmaml::testing
