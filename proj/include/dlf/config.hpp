// JSON run configuration: parsing with field-path errors, defaults, and the
// resolved (fully defaulted) form written beside every run's outputs.
#pragma once

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "dlf/data.hpp"
#include "dlf/meta.hpp"
#include "dlf/student.hpp"
#include "dlf/teacher.hpp"

namespace dlf {

/// Invalid configuration; `path()` is the offending field, e.g. "inner.batch_size".
class ConfigError : public Error {
 public:
  ConfigError(std::string path, const std::string& msg) : Error(path + ": " + msg), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

struct DatasetConfig {
  std::string type = "blobs";  // blobs | mnist
  // blobs
  std::size_t n = 400;
  std::size_t n_classes = 2;
  std::size_t dim = 2;
  double separation = 1.5;
  std::vector<double> proportions;
  // mnist
  std::string images;
  std::string labels;
  std::string test_images;  // optional: draw the test split from a separate file pair
  std::string test_labels;
  // both
  std::size_t train = 200;
  std::size_t dev = 100;
  std::size_t test = 100;
  std::uint64_t seed = 0;
};

struct StudentConfig {
  std::vector<std::size_t> hidden_sizes{4};
  std::uint64_t init_seed = 1;
};

struct InnerConfig {
  std::size_t T = 20;
  std::size_t batch_size = 4;
  EtaSchedule eta = EtaSchedule::constant(0.1);
  double momentum = 0.0;
  std::uint64_t schedule_seed = 2;
  std::uint64_t subsample_seed = 3;
  std::size_t train_acc_subsample = 512;
  std::size_t dev_subsample = 0;
  bool reinit_per_teacher_step = true;
};

struct TeacherConfig {
  std::size_t n_keys = 10;
  std::size_t steps = 0;
  AdamHyper adam;
  std::uint64_t init_seed = 4;
  std::string checkpoint;  // used by train-student
};

struct LoggingConfig {
  std::string out_dir = "runs/default";
  std::size_t dump_phi_every = 0;
};

struct GradcheckConfig {
  double epsilon = 1e-3;
  double max_rel_error = 1e-3;
  double min_cosine = 0.999;
  double coord_floor = 1e-8;
  std::size_t max_params = 400;
  bool freeze_states = false;
  bool negate_eta = false;  // negative control: reverse sweep with sign-flipped learning rates
};

struct RunConfig {
  DatasetConfig dataset;
  StudentConfig student;
  InnerConfig inner;
  TeacherConfig teacher;
  LossSpec loss = LossSpec::bilinear();
  LoggingConfig logging;
  GradcheckConfig gradcheck;
};

namespace config_detail {

using nlohmann::json;

/// Reads one JSON object, remembering which keys were consumed.
class Block {
 public:
  Block(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }
  const json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  template <class T>
  void read(const std::string& key, T& out) {
    if (!has(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(field(key), "wrong type");
    }
  }

  void read_count(const std::string& key, std::size_t& out) {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_number_integer() || v.get<std::int64_t>() < 0) throw ConfigError(field(key), "expected a non-negative integer");
    out = v.get<std::size_t>();
  }

  void read_seed(const std::string& key, std::uint64_t& out) {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0))
      throw ConfigError(field(key), "expected a non-negative integer");
    out = v.get<std::uint64_t>();
  }

  void read_number(const std::string& key, double& out) {
    if (!has(key)) return;
    if (!j_.at(key).is_number()) throw ConfigError(field(key), "expected a number");
    out = j_.at(key).get<double>();
  }

  void reject_unknown() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ConfigError(field(k), "unknown key");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline std::string resolve_path(const std::string& p, const std::filesystem::path& base) {
  if (p.empty()) return p;
  const std::filesystem::path path(p);
  return path.is_absolute() ? p : (base / path).lexically_normal().string();
}

inline void require(bool ok, const std::string& path, const std::string& msg) {
  if (!ok) throw ConfigError(path, msg);
}

}  // namespace config_detail

/// Parses and validates a config document. Relative data paths resolve against `base_dir`.
inline RunConfig parse_config(const nlohmann::json& doc, const std::filesystem::path& base_dir = {}) {
  using config_detail::Block;
  using config_detail::require;
  RunConfig c;
  Block root(doc, "");

  if (root.has("dataset")) {
    Block b(root.raw("dataset"), "dataset");
    auto& d = c.dataset;
    b.read("type", d.type);
    require(d.type == "blobs" || d.type == "mnist", "dataset.type", "must be \"blobs\" or \"mnist\"");
    b.read_count("n", d.n);
    b.read_count("n_classes", d.n_classes);
    b.read_count("dim", d.dim);
    b.read_number("separation", d.separation);
    b.read("proportions", d.proportions);
    b.read("images", d.images);
    b.read("labels", d.labels);
    b.read("test_images", d.test_images);
    b.read("test_labels", d.test_labels);
    if (b.has("sizes")) {
      const auto& s = b.raw("sizes");
      require(s.is_array() && s.size() == 3, "dataset.sizes", "expected [train, dev, test]");
      for (std::size_t i = 0; i < 3; ++i) require(s[i].is_number_integer() && s[i].get<std::int64_t>() >= 0,
                                                  "dataset.sizes", "entries must be non-negative integers");
      d.train = s[0].get<std::size_t>();
      d.dev = s[1].get<std::size_t>();
      d.test = s[2].get<std::size_t>();
    }
    b.read_seed("seed", d.seed);
    b.reject_unknown();
    d.images = config_detail::resolve_path(d.images, base_dir);
    d.labels = config_detail::resolve_path(d.labels, base_dir);
    d.test_images = config_detail::resolve_path(d.test_images, base_dir);
    d.test_labels = config_detail::resolve_path(d.test_labels, base_dir);
    if (d.type == "blobs") {
      require(d.n_classes >= 2, "dataset.n_classes", "must be >= 2");
      require(d.dim >= 1, "dataset.dim", "must be >= 1");
      require(d.n >= d.n_classes, "dataset.n", "must be >= n_classes");
      require(d.train + d.dev + d.test <= d.n, "dataset.sizes", "sum exceeds dataset.n");
      require(d.proportions.empty() || d.proportions.size() == d.n_classes, "dataset.proportions",
              "need one proportion per class");
    } else {
      require(!d.images.empty(), "dataset.images", "required for mnist");
      require(!d.labels.empty(), "dataset.labels", "required for mnist");
      require(d.test_images.empty() == d.test_labels.empty(), "dataset.test_images",
              "test_images and test_labels go together");
      d.n_classes = 10;
    }
    require(d.train >= 1, "dataset.sizes", "train split must be non-empty");
  }

  if (root.has("student")) {
    Block b(root.raw("student"), "student");
    b.read("hidden_sizes", c.student.hidden_sizes);
    b.read_seed("init_seed", c.student.init_seed);
    b.reject_unknown();
    for (auto h : c.student.hidden_sizes) require(h >= 1, "student.hidden_sizes", "sizes must be positive");
  }

  if (root.has("inner")) {
    Block b(root.raw("inner"), "inner");
    auto& in = c.inner;
    b.read_count("T", in.T);
    b.read_count("batch_size", in.batch_size);
    require(in.batch_size >= 1, "inner.batch_size", "must be >= 1");
    if (b.has("eta")) {
      const auto& e = b.raw("eta");
      if (e.is_number()) {
        in.eta = EtaSchedule::constant(e.get<double>());
      } else {
        require(e.is_object() && e.contains("values"), "inner.eta", "expected a number or {boundaries, values}");
        Block eb(e, "inner.eta");
        in.eta.boundaries.clear();
        eb.read("boundaries", in.eta.boundaries);
        eb.read("values", in.eta.values);
        eb.reject_unknown();
        try {
          in.eta.validate();
        } catch (const Error& err) {
          throw ConfigError("inner.eta", err.what());
        }
      }
    }
    b.read_number("momentum", in.momentum);
    require(in.momentum >= 0.0 && in.momentum < 1.0, "inner.momentum", "must be in [0,1)");
    b.read_seed("schedule_seed", in.schedule_seed);
    b.read_seed("subsample_seed", in.subsample_seed);
    b.read_count("train_acc_subsample", in.train_acc_subsample);
    b.read_count("dev_subsample", in.dev_subsample);
    b.read("reinit_per_teacher_step", in.reinit_per_teacher_step);
    b.reject_unknown();
  }

  if (root.has("teacher")) {
    Block b(root.raw("teacher"), "teacher");
    auto& t = c.teacher;
    b.read_count("n_keys", t.n_keys);
    require(t.n_keys >= 1, "teacher.n_keys", "must be >= 1");
    b.read_count("steps", t.steps);
    if (b.has("adam")) {
      Block a(b.raw("adam"), "teacher.adam");
      a.read_number("alpha", t.adam.alpha);
      a.read_number("beta1", t.adam.beta1);
      a.read_number("beta2", t.adam.beta2);
      a.read_number("eps", t.adam.eps);
      a.reject_unknown();
      require(t.adam.alpha > 0, "teacher.adam.alpha", "must be positive");
      require(t.adam.beta1 >= 0 && t.adam.beta1 < 1, "teacher.adam.beta1", "must be in [0,1)");
      require(t.adam.beta2 >= 0 && t.adam.beta2 < 1, "teacher.adam.beta2", "must be in [0,1)");
      require(t.adam.eps > 0, "teacher.adam.eps", "must be positive");
    }
    b.read_seed("init_seed", t.init_seed);
    b.read("checkpoint", t.checkpoint);
    t.checkpoint = config_detail::resolve_path(t.checkpoint, base_dir);
    b.reject_unknown();
  }

  if (root.has("loss")) {
    Block b(root.raw("loss"), "loss");
    std::string family = to_string(c.loss.family);
    b.read("family", family);
    try {
      c.loss.family = loss_family_from_string(family);
    } catch (const Error& e) {
      throw ConfigError("loss.family", e.what());
    }
    c.loss.smooth_k.reset();
    if (b.has("smooth_k")) {
      double k = 0.0;
      b.read_number("smooth_k", k);
      c.loss.smooth_k = k;
    }
    b.reject_unknown();
    require(c.loss.family != LossFamily::smooth01 || c.loss.smooth_k.has_value(), "loss.smooth_k",
            "required for smooth01");
    require(c.loss.family == LossFamily::smooth01 || !c.loss.smooth_k.has_value(), "loss.smooth_k",
            "only valid for smooth01");
    require(!c.loss.smooth_k || *c.loss.smooth_k > 0, "loss.smooth_k", "must be positive");
  }

  if (root.has("logging")) {
    Block b(root.raw("logging"), "logging");
    b.read("out_dir", c.logging.out_dir);
    b.read_count("dump_phi_every", c.logging.dump_phi_every);
    b.reject_unknown();
  }

  if (root.has("gradcheck")) {
    Block b(root.raw("gradcheck"), "gradcheck");
    auto& g = c.gradcheck;
    b.read_number("epsilon", g.epsilon);
    b.read_number("max_rel_error", g.max_rel_error);
    b.read_number("min_cosine", g.min_cosine);
    b.read_number("coord_floor", g.coord_floor);
    b.read_count("max_params", g.max_params);
    b.read("freeze_states", g.freeze_states);
    b.read("negate_eta", g.negate_eta);
    b.reject_unknown();
    require(g.epsilon > 0, "gradcheck.epsilon", "must be positive");
  }

  root.reject_unknown();
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("<file>", "cannot open config '" + path + "'");
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(f);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("<file>", std::string("invalid JSON: ") + e.what());
  }
  return parse_config(doc, std::filesystem::absolute(path).parent_path());
}

inline nlohmann::json to_json(const RunConfig& c) {
  using nlohmann::json;
  json eta;
  if (c.inner.eta.boundaries.empty())
    eta = c.inner.eta.values.front();
  else
    eta = {{"boundaries", c.inner.eta.boundaries}, {"values", c.inner.eta.values}};
  json dataset = {{"type", c.dataset.type},
                  {"sizes", {c.dataset.train, c.dataset.dev, c.dataset.test}},
                  {"seed", c.dataset.seed}};
  if (c.dataset.type == "blobs") {
    dataset["n"] = c.dataset.n;
    dataset["n_classes"] = c.dataset.n_classes;
    dataset["dim"] = c.dataset.dim;
    dataset["separation"] = c.dataset.separation;
    dataset["proportions"] = c.dataset.proportions;
  } else {
    dataset["images"] = c.dataset.images;
    dataset["labels"] = c.dataset.labels;
    if (!c.dataset.test_images.empty()) {
      dataset["test_images"] = c.dataset.test_images;
      dataset["test_labels"] = c.dataset.test_labels;
    }
  }
  json loss = {{"family", to_string(c.loss.family)}};
  if (c.loss.smooth_k) loss["smooth_k"] = *c.loss.smooth_k;
  return {
      {"dataset", dataset},
      {"student", {{"hidden_sizes", c.student.hidden_sizes}, {"init_seed", c.student.init_seed}}},
      {"inner",
       {{"T", c.inner.T},
        {"batch_size", c.inner.batch_size},
        {"eta", eta},
        {"momentum", c.inner.momentum},
        {"schedule_seed", c.inner.schedule_seed},
        {"subsample_seed", c.inner.subsample_seed},
        {"train_acc_subsample", c.inner.train_acc_subsample},
        {"dev_subsample", c.inner.dev_subsample},
        {"reinit_per_teacher_step", c.inner.reinit_per_teacher_step}}},
      {"teacher",
       {{"n_keys", c.teacher.n_keys},
        {"steps", c.teacher.steps},
        {"adam",
         {{"alpha", c.teacher.adam.alpha},
          {"beta1", c.teacher.adam.beta1},
          {"beta2", c.teacher.adam.beta2},
          {"eps", c.teacher.adam.eps}}},
        {"init_seed", c.teacher.init_seed},
        {"checkpoint", c.teacher.checkpoint}}},
      {"loss", loss},
      {"logging", {{"out_dir", c.logging.out_dir}, {"dump_phi_every", c.logging.dump_phi_every}}},
      {"gradcheck",
       {{"epsilon", c.gradcheck.epsilon},
        {"max_rel_error", c.gradcheck.max_rel_error},
        {"min_cosine", c.gradcheck.min_cosine},
        {"coord_floor", c.gradcheck.coord_floor},
        {"max_params", c.gradcheck.max_params},
        {"freeze_states", c.gradcheck.freeze_states},
        {"negate_eta", c.gradcheck.negate_eta}}},
  };
}

inline MetaConfig meta_config(const RunConfig& c) {
  MetaConfig m;
  m.T = c.inner.T;
  m.batch_size = c.inner.batch_size;
  m.eta = c.inner.eta;
  m.teacher_steps = c.teacher.steps;
  m.hidden_sizes = c.student.hidden_sizes;
  m.student_seed = c.student.init_seed;
  m.schedule_seed = c.inner.schedule_seed;
  m.subsample_seed = c.inner.subsample_seed;
  m.train_acc_subsample = c.inner.train_acc_subsample;
  m.dev_subsample = c.inner.dev_subsample;
  m.reinit_per_teacher_step = c.inner.reinit_per_teacher_step;
  m.adam = c.teacher.adam;
  return m;
}

/// Train/dev/test splits described by the dataset block.
inline Split build_data(const DatasetConfig& d) {
  if (d.type == "blobs") {
    const Dataset all = synth_blobs(d.n, d.n_classes, d.dim, d.separation, d.proportions, d.seed);
    return split(all, d.train, d.dev, d.test, mix_seed(d.seed, 1));
  }
  const Dataset pool = load_mnist_idx(d.images, d.labels);
  if (d.test_images.empty()) return split(pool, d.train, d.dev, d.test, mix_seed(d.seed, 1));
  Split s = split(pool, d.train, d.dev, 0, mix_seed(d.seed, 1));
  const Dataset test_pool = load_mnist_idx(d.test_images, d.test_labels);
  s.test = d.test == 0 ? test_pool : split(test_pool, d.test, 0, 0, mix_seed(d.seed, 2)).train;
  return s;
}

inline CoefficientKind coefficient_kind(const LossSpec& loss) {
  return loss.family == LossFamily::diagonal ? CoefficientKind::diagonal : CoefficientKind::full_matrix;
}

inline TeacherParams initial_teacher(const RunConfig& c) {
  const auto k = c.dataset.n_classes;
  return TeacherParams::init(coefficient_kind(c.loss), k, c.teacher.n_keys, 3 + k, c.teacher.init_seed);
}

}  // namespace dlf
