// Datasets: MNIST IDX files, seeded Gaussian blobs, splits and batch schedules.
#pragma once

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <random>
#include <string>
#include <tuple>
#include <vector>

#include "dlf/student.hpp"
#include "dlf/tensor.hpp"

namespace dlf {

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : Error(what + " at offset " + std::to_string(offset)), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

struct Dataset {
  Tensor inputs;  // (n, d), values in [0,1]
  Labels labels;
  std::size_t n_classes = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return inputs.shape.size() == 2 ? inputs.shape[1] : 0; }
  bool empty() const { return labels.empty(); }

  void validate() const {
    if (inputs.shape.size() != 2 || inputs.shape[0] != labels.size())
      throw ShapeError("dataset: " + std::to_string(labels.size()) + " labels for inputs " + shape_str(inputs.shape));
    for (auto y : labels)
      if (y >= n_classes) throw Error("dataset: label " + std::to_string(y) + " >= n_classes");
  }

  Dataset subset(const std::vector<std::size_t>& idx) const {
    Dataset out;
    out.n_classes = n_classes;
    const auto d = dim();
    out.inputs = Tensor({idx.size(), d});
    out.labels.reserve(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      std::copy_n(inputs.data.begin() + std::ptrdiff_t(idx[i] * d), d, out.inputs.data.begin() + std::ptrdiff_t(i * d));
      out.labels.push_back(labels[idx[i]]);
    }
    return out;
  }

  /// Concatenation of this set with itself `times` times.
  Dataset repeated(std::size_t times) const {
    std::vector<std::size_t> idx;
    for (std::size_t r = 0; r < times; ++r)
      for (std::size_t i = 0; i < size(); ++i) idx.push_back(i);
    return subset(idx);
  }
};

// ---- IDX -----------------------------------------------------------------

namespace idx {

constexpr std::uint32_t kLabelMagic = 0x00000801;
constexpr std::uint32_t kImageMagic = 0x00000803;

inline std::uint32_t read_be32(const std::string& b, std::size_t off) {
  if (off + 4 > b.size()) throw ParseError("truncated header", off);
  return (std::uint32_t(static_cast<unsigned char>(b[off])) << 24) |
         (std::uint32_t(static_cast<unsigned char>(b[off + 1])) << 16) |
         (std::uint32_t(static_cast<unsigned char>(b[off + 2])) << 8) |
         std::uint32_t(static_cast<unsigned char>(b[off + 3]));
}

inline void write_be32(std::string& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(char((v >> s) & 0xFF));
}

inline Labels parse_labels(const std::string& bytes) {
  if (read_be32(bytes, 0) != kLabelMagic) throw ParseError("bad magic", 0);
  const std::uint32_t n = read_be32(bytes, 4);
  if (bytes.size() < 8 + std::size_t(n)) throw ParseError("truncated payload", bytes.size());
  Labels out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<unsigned char>(bytes[8 + i]);
  return out;
}

/// Returns (n, rows*cols) pixel intensities divided by 255.
inline Tensor parse_images(const std::string& bytes) {
  if (read_be32(bytes, 0) != kImageMagic) throw ParseError("bad magic", 0);
  const std::size_t n = read_be32(bytes, 4), rows = read_be32(bytes, 8), cols = read_be32(bytes, 12);
  const std::size_t d = rows * cols;
  if (bytes.size() < 16 + n * d) throw ParseError("truncated payload", bytes.size());
  Tensor out({n, d});
  for (std::size_t i = 0; i < n * d; ++i) out.data[i] = double(static_cast<unsigned char>(bytes[16 + i])) / 255.0;
  return out;
}

inline std::string encode_labels(const Labels& labels) {
  std::string out;
  write_be32(out, kLabelMagic);
  write_be32(out, std::uint32_t(labels.size()));
  for (auto y : labels) {
    if (y > 255) throw Error("idx: label " + std::to_string(y) + " does not fit a byte");
    out.push_back(char(y));
  }
  return out;
}

/// Quantizes [0,1] inputs to bytes. `rows * cols` must equal the input width.
inline std::string encode_images(const Tensor& inputs, std::uint32_t rows, std::uint32_t cols) {
  if (inputs.shape.size() != 2 || inputs.shape[1] != std::size_t(rows) * cols)
    throw ShapeError("idx: image width does not match rows*cols");
  std::string out;
  write_be32(out, kImageMagic);
  write_be32(out, std::uint32_t(inputs.shape[0]));
  write_be32(out, rows);
  write_be32(out, cols);
  for (double v : inputs.data) out.push_back(char(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
  return out;
}

inline bool is_gz(const std::string& path) { return path.size() >= 3 && path.compare(path.size() - 3, 3, ".gz") == 0; }

/// Whole file contents; transparently inflates paths ending in ".gz".
inline std::string read_file(const std::string& path) {
  if (is_gz(path)) {
    gzFile f = gzopen(path.c_str(), "rb");
    if (!f) throw Error("cannot open '" + path + "'");
    std::string out;
    char buf[1 << 16];
    int got = 0;
    while ((got = gzread(f, buf, sizeof buf)) > 0) out.append(buf, std::size_t(got));
    const bool failed = got < 0;
    gzclose(f);
    if (failed) throw Error("corrupt gzip stream in '" + path + "'");
    return out;
  }
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, const std::string& bytes) {
  if (is_gz(path)) {
    gzFile f = gzopen(path.c_str(), "wb");
    if (!f) throw Error("cannot open '" + path + "' for writing");
    const int wrote = bytes.empty() ? 0 : gzwrite(f, bytes.data(), unsigned(bytes.size()));
    gzclose(f);
    if (std::size_t(wrote) != bytes.size()) throw Error("failed writing '" + path + "'");
    return;
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open '" + path + "' for writing");
  f.write(bytes.data(), std::streamsize(bytes.size()));
  if (!f) throw Error("failed writing '" + path + "'");
}

}  // namespace idx

inline Dataset load_mnist_idx(const std::string& images_path, const std::string& labels_path) {
  Dataset ds;
  ds.inputs = idx::parse_images(idx::read_file(images_path));
  ds.labels = idx::parse_labels(idx::read_file(labels_path));
  if (ds.inputs.shape[0] != ds.labels.size())
    throw ParseError("count mismatch: " + std::to_string(ds.inputs.shape[0]) + " images vs " +
                         std::to_string(ds.labels.size()) + " labels",
                     4);
  ds.n_classes = 10;
  ds.validate();
  return ds;
}

inline void write_mnist_idx(const Dataset& ds, const std::string& images_path, const std::string& labels_path,
                            std::uint32_t rows, std::uint32_t cols) {
  idx::write_file(images_path, idx::encode_images(ds.inputs, rows, cols));
  idx::write_file(labels_path, idx::encode_labels(ds.labels));
}

// ---- synthetic blobs -----------------------------------------------------

/// Isotropic unit-variance Gaussian per class around a random N(0, I) center
/// scaled by `separation`. Class counts are the rounded proportions (the
/// remainder goes to the largest class); rows are shuffled and each feature is
/// min-max scaled to [0,1].
inline Dataset synth_blobs(std::size_t n, std::size_t n_classes, std::size_t dim, double separation,
                           std::vector<double> proportions, std::uint64_t seed) {
  if (n_classes == 0 || dim == 0) throw Error("synth_blobs: n_classes and dim must be positive");
  if (n < n_classes) throw Error("synth_blobs: n=" + std::to_string(n) + " smaller than n_classes");
  if (proportions.empty()) proportions.assign(n_classes, 1.0 / double(n_classes));
  if (proportions.size() != n_classes) throw Error("synth_blobs: need one proportion per class");
  const double total = std::accumulate(proportions.begin(), proportions.end(), 0.0);
  if (std::abs(total - 1.0) > 1e-9) throw Error("synth_blobs: proportions must sum to 1");
  for (double p : proportions)
    if (p < 0.0) throw Error("synth_blobs: negative proportion");

  std::vector<std::size_t> counts(n_classes);
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < n_classes; ++c) assigned += counts[c] = std::size_t(std::llround(proportions[c] * double(n)));
  const auto largest = std::size_t(std::max_element(proportions.begin(), proportions.end()) - proportions.begin());
  if (assigned > n) {
    counts[largest] -= assigned - n;
  } else {
    counts[largest] += n - assigned;
  }

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> centers(n_classes * dim);
  for (double& c : centers) c = separation * normal(rng);

  Dataset raw;
  raw.n_classes = n_classes;
  raw.inputs = Tensor({n, dim});
  raw.labels.reserve(n);
  std::size_t row = 0;
  for (std::size_t c = 0; c < n_classes; ++c)
    for (std::size_t i = 0; i < counts[c]; ++i, ++row) {
      for (std::size_t j = 0; j < dim; ++j) raw.inputs(row, j) = centers[c * dim + j] + normal(rng);
      raw.labels.push_back(c);
    }

  for (std::size_t j = 0; j < dim; ++j) {
    double lo = raw.inputs(0, j), hi = lo;
    for (std::size_t i = 0; i < n; ++i) lo = std::min(lo, raw.inputs(i, j)), hi = std::max(hi, raw.inputs(i, j));
    for (std::size_t i = 0; i < n; ++i) raw.inputs(i, j) = hi > lo ? (raw.inputs(i, j) - lo) / (hi - lo) : 0.5;
  }

  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  return raw.subset(perm);
}

// ---- splits and schedules ------------------------------------------------

inline std::vector<std::size_t> seeded_permutation(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), 0);
  std::shuffle(p.begin(), p.end(), rng);
  return p;
}

struct Split {
  Dataset train, dev, test;
};

/// Disjoint train/dev/test slices of one seeded shuffle.
inline Split split(const Dataset& ds, std::size_t n_train, std::size_t n_dev, std::size_t n_test, std::uint64_t seed) {
  if (n_train + n_dev + n_test > ds.size())
    throw Error("split: sizes " + std::to_string(n_train + n_dev + n_test) + " exceed dataset size " +
                std::to_string(ds.size()));
  std::mt19937_64 rng(seed);
  const auto perm = seeded_permutation(ds.size(), rng);
  auto slice = [&](std::size_t from, std::size_t count) {
    return ds.subset(std::vector<std::size_t>(perm.begin() + std::ptrdiff_t(from), perm.begin() + std::ptrdiff_t(from + count)));
  };
  return {slice(0, n_train), slice(n_train, n_dev), slice(n_train + n_dev, n_test)};
}

struct BatchSchedule {
  std::vector<std::vector<std::size_t>> batches;
  std::uint64_t seed = 0;
};

/// T batches drawn by walking consecutive seeded permutations of [0, n);
/// a batch may straddle an epoch boundary.
inline BatchSchedule make_schedule(std::size_t n, std::size_t steps, std::size_t batch_size, std::uint64_t seed) {
  if (batch_size == 0) throw Error("make_schedule: batch_size must be positive");
  if (n == 0 && steps > 0) throw Error("make_schedule: empty training set");
  BatchSchedule out;
  out.seed = seed;
  out.batches.reserve(steps);
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> epoch;
  std::size_t pos = 0;
  for (std::size_t t = 0; t < steps; ++t) {
    std::vector<std::size_t> batch;
    batch.reserve(batch_size);
    while (batch.size() < batch_size) {
      if (pos == epoch.size()) {
        epoch = seeded_permutation(n, rng);
        pos = 0;
      }
      batch.push_back(epoch[pos++]);
    }
    out.batches.push_back(std::move(batch));
  }
  return out;
}

}  // namespace dlf
