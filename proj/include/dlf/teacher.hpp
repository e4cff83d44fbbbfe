// Attention teacher: student status -> loss coefficients, plus its Adam optimizer
// and checkpoint format.
#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "dlf/autodiff.hpp"
#include "dlf/student.hpp"
#include "dlf/tensor.hpp"

namespace dlf {

/// Normalized student status: [t/T, train acc, dev acc, per-class dev precision...].
struct StateVector {
  Tensor values;  // (1, 3 + n_classes)

  std::size_t size() const { return values.size(); }
  double operator[](std::size_t i) const { return values.data[i]; }
  friend bool operator==(const StateVector&, const StateVector&) = default;
};

inline StateVector featurize_state(std::size_t t, std::size_t total_steps, double train_acc, double dev_acc,
                                   const std::vector<double>& dev_precisions) {
  if (t > total_steps)
    throw Error("featurize_state: step " + std::to_string(t) + " beyond horizon " + std::to_string(total_steps));
  auto in_unit = [](double v, const char* what) {
    if (!(v >= 0.0 && v <= 1.0)) throw Error(std::string("featurize_state: ") + what + " outside [0,1]");
    return v;
  };
  std::vector<double> v;
  v.reserve(3 + dev_precisions.size());
  v.push_back(total_steps == 0 ? 0.0 : double(t) / double(total_steps));
  v.push_back(in_unit(train_acc, "train accuracy"));
  v.push_back(in_unit(dev_acc, "dev accuracy"));
  for (double p : dev_precisions) v.push_back(in_unit(p, "precision"));
  return {Tensor::row(std::move(v))};
}

/// theta = (W, V). W is (|Y|,|Y|,N) for the full family, (|Y|,N) for the diagonal one;
/// V is (N, |s|). Phi = W softmax(V s), contracting over the key axis.
struct TeacherParams {
  CoefficientKind kind = CoefficientKind::full_matrix;
  std::size_t n_classes = 0;
  std::size_t n_keys = 0;
  std::size_t state_dim = 0;
  Tensor W;
  Tensor V;

  std::size_t phi_size() const { return kind == CoefficientKind::full_matrix ? n_classes * n_classes : n_classes; }

  Shape w_shape() const {
    return kind == CoefficientKind::full_matrix ? Shape{n_classes, n_classes, n_keys} : Shape{n_classes, n_keys};
  }

  void validate() const {
    if (n_classes == 0 || n_keys == 0 || state_dim == 0) throw ShapeError("teacher: dimensions must be positive");
    if (W.shape != w_shape()) throw ShapeError("teacher: W has shape " + shape_str(W.shape) + ", expected " + shape_str(w_shape()));
    if (V.shape != Shape{n_keys, state_dim})
      throw ShapeError("teacher: V has shape " + shape_str(V.shape) + ", expected " + shape_str({n_keys, state_dim}));
  }

  ParamVector params() const { return ParamVector({{"W", W}, {"V", V}}); }

  TeacherParams with_params(const ParamVector& p) const {
    TeacherParams out = *this;
    if (p.num_segments() != 2 || p[0].shape != W.shape || p[1].shape != V.shape)
      throw ShapeError("teacher: parameter vector does not match teacher shapes");
    out.W = p[0];
    out.V = p[1];
    return out;
  }

  /// Every W slice starts at the identity (ones for diagonal) plus 0.01-scaled
  /// Glorot noise; V is Glorot-uniform.
  static TeacherParams init(CoefficientKind kind, std::size_t n_classes, std::size_t n_keys, std::size_t state_dim,
                            std::uint64_t seed) {
    TeacherParams t;
    t.kind = kind;
    t.n_classes = n_classes;
    t.n_keys = n_keys;
    t.state_dim = state_dim;
    std::mt19937_64 rng(seed);
    const double aw = std::sqrt(6.0 / double(n_keys + t.phi_size()));
    std::uniform_real_distribution<double> uw(-aw, aw);
    t.W = Tensor(t.w_shape());
    for (std::size_t r = 0; r < t.phi_size(); ++r) {
      const bool on_diag = kind == CoefficientKind::diagonal || (r / n_classes == r % n_classes);
      for (std::size_t k = 0; k < n_keys; ++k) t.W.data[r * n_keys + k] = (on_diag ? 1.0 : 0.0) + 0.01 * uw(rng);
    }
    const double av = std::sqrt(6.0 / double(state_dim + n_keys));
    std::uniform_real_distribution<double> uv(-av, av);
    t.V = Tensor({n_keys, state_dim});
    for (double& v : t.V.data) v = uv(rng);
    t.validate();
    return t;
  }
};

/// Differentiable Phi in terms of (W, V) leaves; the state is a constant.
inline ad::Var teacher_forward(const TeacherParams& shape, const ad::Var& W, const ad::Var& V, const StateVector& s) {
  if (s.size() != shape.state_dim)
    throw ShapeError("teacher_forward: state has " + std::to_string(s.size()) + " entries, teacher expects " +
                     std::to_string(shape.state_dim));
  const ad::Var logits = ad::matmul(ad::constant(Tensor({1, s.size()}, s.values.data)), V, false, true);
  const ad::Var attention = ad::softmax_rows(logits);
  const ad::Var flat = ad::matmul(attention, ad::reshape(W, {shape.phi_size(), shape.n_keys}), false, true);
  return shape.kind == CoefficientKind::full_matrix ? ad::reshape(flat, {shape.n_classes, shape.n_classes}) : flat;
}

inline LossCoefficients teacher_forward(const TeacherParams& theta, const StateVector& s) {
  theta.validate();
  ad::NoGradGuard guard;
  const ad::Var phi = teacher_forward(theta, ad::constant(theta.W), ad::constant(theta.V), s);
  return {theta.kind, phi.value()};
}

/// Attention weights softmax(V s).
inline std::vector<double> teacher_attention(const TeacherParams& theta, const StateVector& s) {
  ad::NoGradGuard guard;
  const ad::Var logits =
      ad::matmul(ad::constant(Tensor({1, s.size()}, s.values.data)), ad::constant(theta.V), false, true);
  return ad::softmax_rows(logits).value().data;
}

// ---- Adam ----------------------------------------------------------------

struct AdamHyper {
  double alpha = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::uint64_t step_count = 0;
  ParamVector m;
  ParamVector v;
  AdamHyper hyper;

  static AdamState for_params(const ParamVector& like, AdamHyper hyper = {}) {
    return {0, like.zeros_like(), like.zeros_like(), hyper};
  }
};

/// One bias-corrected Adam step minimizing along `grad`.
inline std::pair<ParamVector, AdamState> adam_step(const ParamVector& theta, const ParamVector& grad, AdamState state) {
  theta.require_same_structure(grad, "adam_step");
  if (state.m.num_segments() == 0) state = AdamState::for_params(theta, state.hyper);
  theta.require_same_structure(state.m, "adam_step");
  const auto& h = state.hyper;
  ++state.step_count;
  const double c1 = 1.0 - std::pow(h.beta1, double(state.step_count));
  const double c2 = 1.0 - std::pow(h.beta2, double(state.step_count));
  ParamVector out = theta;
  for (std::size_t s = 0; s < theta.num_segments(); ++s) {
    auto& m = state.m[s].data;
    auto& v = state.v[s].data;
    const auto& g = grad[s].data;
    auto& w = out[s].data;
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g[i];
      v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g[i] * g[i];
      w[i] -= h.alpha * (m[i] / c1) / (std::sqrt(v[i] / c2) + h.eps);
    }
  }
  return {std::move(out), std::move(state)};
}

// ---- checkpoint ----------------------------------------------------------
//
// Layout, little-endian:
//   "DLF1" | u32 kind (0 full, 1 diagonal) | u32 n_classes | u32 n_keys | u32 state_dim
//   | f64 W[phi_size * n_keys] | f64 V[n_keys * state_dim]

namespace detail {
inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xFF));
}
inline void put_f64(std::string& out, double d) {
  const auto v = std::bit_cast<std::uint64_t>(d);
  for (int i = 0; i < 8; ++i) out.push_back(char((v >> (8 * i)) & 0xFF));
}
inline std::uint64_t get_le(const std::string& in, std::size_t off, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= std::uint64_t(static_cast<unsigned char>(in[off + std::size_t(i)])) << (8 * i);
  return v;
}
}  // namespace detail

inline std::string encode_checkpoint(const TeacherParams& t) {
  t.validate();
  std::string out = "DLF1";
  detail::put_u32(out, t.kind == CoefficientKind::full_matrix ? 0u : 1u);
  detail::put_u32(out, std::uint32_t(t.n_classes));
  detail::put_u32(out, std::uint32_t(t.n_keys));
  detail::put_u32(out, std::uint32_t(t.state_dim));
  for (double d : t.W.data) detail::put_f64(out, d);
  for (double d : t.V.data) detail::put_f64(out, d);
  return out;
}

inline TeacherParams decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < 20 || bytes.compare(0, 4, "DLF1") != 0) throw Error("checkpoint: bad magic");
  TeacherParams t;
  const auto kind = detail::get_le(bytes, 4, 4);
  if (kind > 1) throw Error("checkpoint: unknown coefficient kind " + std::to_string(kind));
  t.kind = kind == 0 ? CoefficientKind::full_matrix : CoefficientKind::diagonal;
  t.n_classes = detail::get_le(bytes, 8, 4);
  t.n_keys = detail::get_le(bytes, 12, 4);
  t.state_dim = detail::get_le(bytes, 16, 4);
  t.W = Tensor(t.w_shape());
  t.V = Tensor({t.n_keys, t.state_dim});
  const std::size_t expected = 20 + 8 * (t.W.size() + t.V.size());
  if (bytes.size() != expected)
    throw Error("checkpoint: expected " + std::to_string(expected) + " bytes, got " + std::to_string(bytes.size()));
  std::size_t off = 20;
  for (double& d : t.W.data) d = std::bit_cast<double>(detail::get_le(bytes, (off += 8) - 8, 8));
  for (double& d : t.V.data) d = std::bit_cast<double>(detail::get_le(bytes, (off += 8) - 8, 8));
  t.validate();
  return t;
}

inline void save_checkpoint(const std::string& path, const TeacherParams& t) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open '" + path + "' for writing");
  const std::string bytes = encode_checkpoint(t);
  f.write(bytes.data(), std::streamsize(bytes.size()));
  if (!f) throw Error("failed writing '" + path + "'");
}

inline TeacherParams load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open checkpoint '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace dlf
