// Test-only reference computations: finite differences and random generators.
// Nothing here calls into the reverse-mode machinery.
#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "dlf/tensor.hpp"

namespace dlf::testing {

using FlatFn = std::function<double(const ParamVector&)>;
using FlatGradFn = std::function<ParamVector(const ParamVector&)>;

inline ParamVector random_like(const ParamVector& like, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  std::vector<double> flat(like.total_len());
  for (double& v : flat) v = n(rng);
  return like.unflatten(flat);
}

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  Tensor t(std::move(shape));
  for (double& v : t.data) v = n(rng);
  return t;
}

/// Central differences of f at x, coordinate by coordinate.
inline ParamVector central_difference(const FlatFn& f, const ParamVector& x, double h) {
  std::vector<double> base = x.flatten(), g(base.size());
  for (std::size_t i = 0; i < base.size(); ++i) {
    auto p = base, m = base;
    p[i] += h;
    m[i] -= h;
    g[i] = (f(x.unflatten(p)) - f(x.unflatten(m))) / (2.0 * h);
  }
  return x.unflatten(g);
}

/// (g(x + eps v) - g(x - eps v)) / (2 eps) for a gradient map g.
inline ParamVector directional_difference(const FlatGradFn& g, const ParamVector& x, const ParamVector& v, double eps) {
  ParamVector p = x, m = x;
  p.axpy(eps, v);
  m.axpy(-eps, v);
  ParamVector out = g(p);
  out.axpy(-1.0, g(m));
  return out.scale(1.0 / (2.0 * eps));
}

/// ||a - b|| / max(||b||, tiny)
inline double rel_error(const ParamVector& a, const ParamVector& b) {
  ParamVector d = a;
  d.axpy(-1.0, b);
  return norm(d) / std::max(norm(b), 1e-300);
}

/// Largest coordinate-wise relative error over coordinates with |b_i| > floor.
inline double max_coord_rel_error(const ParamVector& a, const ParamVector& b, double floor) {
  const auto fa = a.flatten(), fb = b.flatten();
  double worst = 0.0;
  for (std::size_t i = 0; i < fa.size(); ++i)
    if (std::abs(fb[i]) > floor) worst = std::max(worst, std::abs(fa[i] - fb[i]) / std::abs(fb[i]));
  return worst;
}

}  // namespace dlf::testing
