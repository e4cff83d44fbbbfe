// Student classifier (tanh MLP with softmax output) and the losses it trains on.
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "dlf/autodiff.hpp"
#include "dlf/tensor.hpp"

namespace dlf {

using Labels = std::vector<std::size_t>;

enum class LossFamily { bilinear, diagonal, cross_entropy, smooth01 };

inline const char* to_string(LossFamily f) {
  switch (f) {
    case LossFamily::bilinear: return "bilinear";
    case LossFamily::diagonal: return "diagonal";
    case LossFamily::cross_entropy: return "cross-entropy";
    case LossFamily::smooth01: return "smooth01";
  }
  return "?";
}

inline LossFamily loss_family_from_string(const std::string& s) {
  if (s == "bilinear") return LossFamily::bilinear;
  if (s == "diagonal") return LossFamily::diagonal;
  if (s == "cross-entropy" || s == "cross_entropy") return LossFamily::cross_entropy;
  if (s == "smooth01") return LossFamily::smooth01;
  throw Error("unknown loss family '" + s + "'");
}

inline bool teacher_controlled(LossFamily f) { return f == LossFamily::bilinear || f == LossFamily::diagonal; }

struct LossSpec {
  LossFamily family = LossFamily::bilinear;
  std::optional<double> smooth_k;  // set iff family == smooth01

  static LossSpec bilinear() { return {LossFamily::bilinear, std::nullopt}; }
  static LossSpec diagonal() { return {LossFamily::diagonal, std::nullopt}; }
  static LossSpec cross_entropy() { return {LossFamily::cross_entropy, std::nullopt}; }
  static LossSpec smooth01(double k = 50.0) { return {LossFamily::smooth01, k}; }

  void validate() const {
    if ((family == LossFamily::smooth01) != smooth_k.has_value())
      throw Error("smooth_k must be given exactly when the loss family is smooth01");
    if (smooth_k && !(*smooth_k > 0.0)) throw Error("smooth_k must be positive");
  }
};

enum class CoefficientKind { full_matrix, diagonal };

/// The coefficients Phi of the bilinear loss: |Y|x|Y| (full) or 1x|Y| (diagonal).
struct LossCoefficients {
  CoefficientKind kind = CoefficientKind::full_matrix;
  Tensor values;

  std::size_t n_classes() const { return values.cols() == 0 ? 0 : (kind == CoefficientKind::diagonal ? values.size() : values.rows()); }

  static LossCoefficients identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
    return {CoefficientKind::full_matrix, std::move(t)};
  }
  static LossCoefficients ones_diagonal(std::size_t n) { return {CoefficientKind::diagonal, Tensor({1, n}, 1.0)}; }
};

// ---- student -------------------------------------------------------------

/// Fully connected classifier: tanh hidden layers, softmax output.
/// Weights are stored (fan_in, fan_out) so a batch is x * W + b.
struct MlpStudent {
  std::vector<std::size_t> layer_sizes;  // input, hidden..., n_classes
  ParamVector omega;

  std::size_t n_layers() const { return layer_sizes.size() - 1; }
  std::size_t input_dim() const { return layer_sizes.front(); }
  std::size_t n_classes() const { return layer_sizes.back(); }

  /// Glorot-uniform weights, zero biases.
  static MlpStudent init(std::vector<std::size_t> layer_sizes, std::uint64_t seed) {
    if (layer_sizes.size() < 2) throw ShapeError("MLP needs at least input and output sizes");
    MlpStudent s;
    s.layer_sizes = std::move(layer_sizes);
    std::mt19937_64 rng(seed);
    for (std::size_t l = 0; l < s.n_layers(); ++l) {
      const auto fan_in = s.layer_sizes[l], fan_out = s.layer_sizes[l + 1];
      const double a = std::sqrt(6.0 / double(fan_in + fan_out));
      std::uniform_real_distribution<double> u(-a, a);
      Tensor w({fan_in, fan_out});
      for (double& v : w.data) v = u(rng);
      s.omega.add("layer" + std::to_string(l) + ".weight", std::move(w));
      s.omega.add("layer" + std::to_string(l) + ".bias", Tensor({1, fan_out}));
    }
    return s;
  }

  void check_omega(const ParamVector& w) const {
    if (w.num_segments() != 2 * n_layers()) throw ShapeError("omega does not match layer sizes");
    for (std::size_t l = 0; l < n_layers(); ++l) {
      if (w[2 * l].shape != Shape{layer_sizes[l], layer_sizes[l + 1]} || w[2 * l + 1].shape != Shape{1, layer_sizes[l + 1]})
        throw ShapeError("omega segment shapes do not match layer sizes at layer " + std::to_string(l));
    }
  }
};

/// Differentiable forward pass: returns (B, |Y|) probabilities.
inline ad::Var forward_probs(const MlpStudent& student, const ad::VarList& omega, const ad::Var& inputs) {
  if (inputs.shape().size() != 2 || inputs.shape()[1] != student.input_dim())
    throw ShapeError("forward_probs: expected inputs (B," + std::to_string(student.input_dim()) + "), got " +
                     shape_str(inputs.shape()));
  ad::Var h = inputs;
  for (std::size_t l = 0; l < student.n_layers(); ++l) {
    h = ad::add_row_bias(ad::matmul(h, omega[2 * l]), omega[2 * l + 1]);
    if (l + 1 < student.n_layers()) h = ad::tanh(h);
  }
  return ad::softmax_rows(h);
}

inline Tensor forward_probs(const MlpStudent& student, const Tensor& inputs) {
  ad::NoGradGuard guard;
  student.check_omega(student.omega);
  return forward_probs(student, ad::leaves(student.omega, false), ad::constant(inputs)).value();
}

// ---- losses --------------------------------------------------------------

namespace detail {
inline void check_labels(const ad::Var& probs, const Labels& labels, const char* op) {
  if (probs.shape().size() != 2) throw ShapeError(std::string(op) + ": probabilities must be (B,|Y|)");
  if (probs.shape()[0] != labels.size())
    throw ShapeError(std::string(op) + ": " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(probs.shape()[0]) + " rows");
  const auto n = probs.shape()[1];
  for (auto y : labels)
    if (y >= n) throw Error(std::string(op) + ": label " + std::to_string(y) + " outside [0," + std::to_string(n) + ")");
}
}  // namespace detail

/// mean_b -log p(y_b | x_b)
inline ad::Var cross_entropy_loss(const ad::Var& probs, const Labels& labels) {
  detail::check_labels(probs, labels, "cross_entropy_loss");
  return ad::neg(ad::mean(ad::pick(ad::log(probs), labels)));
}

/// mean_b -sigmoid(onehot(y_b)' Phi log p_b)
inline ad::Var bilinear_loss(const ad::Var& probs, const Labels& labels, const ad::Var& phi) {
  detail::check_labels(probs, labels, "bilinear_loss");
  const auto n = probs.shape()[1];
  if (phi.shape() != Shape{n, n})
    throw ShapeError("bilinear_loss: coefficients must be " + shape_str({n, n}) + ", got " + shape_str(phi.shape()));
  const ad::Var rows = ad::gather_rows(phi, labels);
  const ad::Var z = ad::sum_cols(ad::mul(rows, ad::log(probs)));
  return ad::neg(ad::mean(ad::sigmoid(z)));
}

/// mean_b -sigmoid(Phi_{y_b} log p_b(y_b))
inline ad::Var diagonal_loss(const ad::Var& probs, const Labels& labels, const ad::Var& phi) {
  detail::check_labels(probs, labels, "diagonal_loss");
  const auto n = probs.shape()[1];
  if (phi.value().size() != n)
    throw ShapeError("diagonal_loss: coefficients must hold " + std::to_string(n) + " values, got " +
                     shape_str(phi.shape()));
  const ad::Var coef = ad::gather_rows(ad::reshape(phi, {n, 1}), labels);
  const ad::Var z = ad::mul(coef, ad::pick(ad::log(probs), labels));
  return ad::neg(ad::mean(ad::sigmoid(z)));
}

/// Strongest competitor of each row: argmax over classes other than the label,
/// lowest index on ties.
inline Labels strongest_competitor(const Tensor& probs, const Labels& labels) {
  const auto n = probs.cols();
  Labels out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    std::size_t best = labels[i] == 0 ? 1 : 0;
    for (std::size_t j = 0; j < n; ++j)
      if (j != labels[i] && probs(i, j) > probs(i, best)) best = j;
    out[i] = best;
  }
  return out;
}

/// mean_b -log sigmoid(K (log p(y) - max_{y*!=y} log p(y*)))
inline ad::Var smooth01_loss(const ad::Var& probs, const Labels& labels, double k) {
  detail::check_labels(probs, labels, "smooth01_loss");
  if (probs.shape()[1] < 2) throw Error("smooth01_loss: needs at least two classes");
  if (!(k > 0.0)) throw Error("smooth01_loss: K must be positive");
  const ad::Var logp = ad::log(probs);
  const ad::Var margin = ad::sub(ad::pick(logp, labels), ad::pick(logp, strongest_competitor(probs.value(), labels)));
  return ad::neg(ad::mean(ad::log_sigmoid(ad::scale(margin, k))));
}

/// Dispatches on the loss family. `phi` is ignored by the fixed losses.
inline ad::Var student_loss(const LossSpec& spec, const ad::Var& probs, const Labels& labels, const ad::Var& phi) {
  switch (spec.family) {
    case LossFamily::bilinear: return bilinear_loss(probs, labels, phi);
    case LossFamily::diagonal: return diagonal_loss(probs, labels, phi);
    case LossFamily::cross_entropy: return cross_entropy_loss(probs, labels);
    case LossFamily::smooth01: return smooth01_loss(probs, labels, spec.smooth_k.value_or(50.0));
  }
  throw Error("unreachable loss family");
}

inline ad::Var loss_with(const LossCoefficients& phi, const ad::Var& probs, const Labels& labels) {
  const ad::Var p = ad::constant(phi.values);
  return phi.kind == CoefficientKind::full_matrix ? bilinear_loss(probs, labels, p) : diagonal_loss(probs, labels, p);
}

// ---- evaluation ----------------------------------------------------------

/// Row-wise argmax; lowest index wins ties.
inline Labels predict(const Tensor& probs) {
  const auto m = probs.rows(), n = probs.cols();
  Labels out(m);
  for (std::size_t i = 0; i < m; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < n; ++j)
      if (probs(i, j) > probs(i, best)) best = j;
    out[i] = best;
  }
  return out;
}

inline double accuracy(const Labels& preds, const Labels& labels) {
  if (preds.size() != labels.size()) throw ShapeError("accuracy: length mismatch");
  if (preds.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hit += preds[i] == labels[i];
  return double(hit) / double(preds.size());
}

/// precision[c] = correct among predicted-c; 0 when c is never predicted.
inline std::vector<double> per_class_precision(const Labels& preds, const Labels& labels, std::size_t n_classes) {
  if (preds.size() != labels.size()) throw ShapeError("per_class_precision: length mismatch");
  std::vector<double> predicted(n_classes, 0.0), correct(n_classes, 0.0);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] >= n_classes) continue;
    predicted[preds[i]] += 1.0;
    correct[preds[i]] += preds[i] == labels[i];
  }
  std::vector<double> out(n_classes, 0.0);
  for (std::size_t c = 0; c < n_classes; ++c)
    if (predicted[c] > 0) out[c] = correct[c] / predicted[c];
  return out;
}

}  // namespace dlf
