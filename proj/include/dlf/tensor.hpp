// Dense row-major tensors and named parameter vectors.
#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace dlf {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Raised when an operation produces NaN or Inf. `op()` names the offending operation.
class NumericalError : public Error {
 public:
  explicit NumericalError(std::string op)
      : Error("numerical overflow in operation '" + op + "'"), op_(std::move(op)) {}
  const std::string& op() const noexcept { return op_; }

 private:
  std::string op_;
};

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
  std::string out = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + ")";
}

struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0) : shape(std::move(s)), data(shape_numel(shape), fill) {}
  Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
    if (shape_numel(shape) != data.size())
      throw ShapeError("tensor shape " + shape_str(shape) + " does not match " +
                       std::to_string(data.size()) + " values");
  }

  static Tensor scalar(double v) { return Tensor({1, 1}, std::vector<double>{v}); }
  static Tensor row(std::vector<double> v) {
    const std::size_t n = v.size();
    return Tensor({1, n}, std::move(v));
  }

  std::size_t size() const noexcept { return data.size(); }
  std::size_t rank() const noexcept { return shape.size(); }

  // Rank-2 view helpers. A rank-1 tensor is treated as a single row.
  std::size_t rows() const { return shape.size() >= 2 ? shape[0] : 1; }
  std::size_t cols() const {
    if (shape.empty()) return 1;
    if (shape.size() == 1) return shape[0];
    return data.size() / shape[0];
  }

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }
  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

/// Ordered list of named tensors that is differentiated as one flat vector.
class ParamVector {
 public:
  using Segment = std::pair<std::string, Tensor>;

  ParamVector() = default;
  explicit ParamVector(std::vector<Segment> segments) : segments_(std::move(segments)) {
    std::unordered_set<std::string> seen;
    for (const auto& [name, t] : segments_)
      if (!seen.insert(name).second) throw ShapeError("duplicate segment name '" + name + "'");
  }

  void add(std::string name, Tensor t) {
    for (const auto& s : segments_)
      if (s.first == name) throw ShapeError("duplicate segment name '" + name + "'");
    segments_.emplace_back(std::move(name), std::move(t));
  }

  const std::vector<Segment>& segments() const noexcept { return segments_; }
  std::size_t num_segments() const noexcept { return segments_.size(); }
  Tensor& operator[](std::size_t i) { return segments_[i].second; }
  const Tensor& operator[](std::size_t i) const { return segments_[i].second; }
  const std::string& name(std::size_t i) const { return segments_[i].first; }

  const Tensor& at(const std::string& name) const {
    for (const auto& s : segments_)
      if (s.first == name) return s.second;
    throw ShapeError("no segment named '" + name + "'");
  }

  std::size_t total_len() const {
    std::size_t n = 0;
    for (const auto& s : segments_) n += s.second.size();
    return n;
  }

  std::vector<double> flatten() const {
    std::vector<double> out;
    out.reserve(total_len());
    for (const auto& s : segments_) out.insert(out.end(), s.second.data.begin(), s.second.data.end());
    return out;
  }

  /// Copy of this structure holding `flat` as its values.
  ParamVector unflatten(std::span<const double> flat) const {
    if (flat.size() != total_len())
      throw ShapeError("unflatten: expected " + std::to_string(total_len()) + " values, got " +
                       std::to_string(flat.size()));
    ParamVector out = *this;
    std::size_t off = 0;
    for (auto& s : out.segments_) {
      std::copy(flat.begin() + off, flat.begin() + off + s.second.size(), s.second.data.begin());
      off += s.second.size();
    }
    return out;
  }

  ParamVector zeros_like() const {
    ParamVector out = *this;
    for (auto& s : out.segments_) std::fill(s.second.data.begin(), s.second.data.end(), 0.0);
    return out;
  }

  bool same_structure(const ParamVector& other) const {
    if (segments_.size() != other.segments_.size()) return false;
    for (std::size_t i = 0; i < segments_.size(); ++i)
      if (segments_[i].first != other.segments_[i].first ||
          segments_[i].second.shape != other.segments_[i].second.shape)
        return false;
    return true;
  }

  void require_same_structure(const ParamVector& other, const char* what) const {
    if (!same_structure(other)) throw ShapeError(std::string(what) + ": parameter structure mismatch");
  }

  /// this += alpha * x
  ParamVector& axpy(double alpha, const ParamVector& x) {
    require_same_structure(x, "axpy");
    for (std::size_t i = 0; i < segments_.size(); ++i) {
      auto& d = segments_[i].second.data;
      const auto& s = x.segments_[i].second.data;
      for (std::size_t j = 0; j < d.size(); ++j) d[j] += alpha * s[j];
    }
    return *this;
  }

  ParamVector& scale(double alpha) {
    for (auto& s : segments_)
      for (double& v : s.second.data) v *= alpha;
    return *this;
  }

  friend bool operator==(const ParamVector&, const ParamVector&) = default;

 private:
  std::vector<Segment> segments_;
};

inline double dot(const ParamVector& a, const ParamVector& b) {
  a.require_same_structure(b, "dot");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.num_segments(); ++i)
    for (std::size_t j = 0; j < a[i].size(); ++j) acc += a[i][j] * b[i][j];
  return acc;
}

inline double norm(const ParamVector& a) { return std::sqrt(dot(a, a)); }

inline double max_abs(const ParamVector& a) {
  double m = 0.0;
  for (const auto& s : a.segments())
    for (double v : s.second.data) m = std::max(m, std::abs(v));
  return m;
}

inline double cosine_similarity(const ParamVector& a, const ParamVector& b) {
  const double na = norm(a), nb = norm(b);
  if (na == 0.0 || nb == 0.0) return (na == nb) ? 1.0 : 0.0;
  return dot(a, b) / (na * nb);
}

}  // namespace dlf
