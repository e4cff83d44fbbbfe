// Command implementations behind the `dlf` executable. Each returns a process
// exit code: 0 success, 1 runtime failure, 2 invalid input, 3 gradient check failed.
#pragma once

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "dlf/config.hpp"

namespace dlf {

namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int failure = 1;
inline constexpr int invalid = 2;
inline constexpr int gradcheck_failed = 3;
}  // namespace exit_code

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Writes Phi as comma-separated rows: Y rows for a full matrix, one row for a diagonal.
inline void write_phi_csv(const std::filesystem::path& path, const LossCoefficients& phi) {
  std::ofstream f(path);
  if (!f) throw Error("cannot write '" + path.string() + "'");
  const std::size_t rows = phi.values.rows(), cols = phi.values.cols();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) f << (c ? "," : "") << format_double(phi.values(r, c));
    f << '\n';
  }
}

/// Parses one state per line; values separated by commas or whitespace. Blank and '#' lines are skipped.
inline std::vector<std::vector<double>> read_states_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("states", "cannot open '" + path + "'");
  std::vector<std::vector<double>> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    for (char& ch : line)
      if (ch == ',') ch = ' ';
    std::istringstream in(line);
    std::string tok;
    std::vector<double> row;
    while (in >> tok) {
      if (row.empty() && tok[0] == '#') break;
      try {
        std::size_t used = 0;
        row.push_back(std::stod(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw ConfigError("states:" + std::to_string(lineno), "not a number: '" + tok + "'");
      }
    }
    if (!row.empty()) out.push_back(std::move(row));
  }
  if (out.empty()) throw ConfigError("states", "no states in '" + path + "'");
  return out;
}

/// Output file for state i of n: `out` itself when n == 1, else `<stem>_<i><ext>`.
inline std::filesystem::path indexed_output(const std::filesystem::path& out, std::size_t i, std::size_t n) {
  if (n == 1) return out;
  std::filesystem::path p = out;
  p.replace_filename(out.stem().string() + "_" + std::to_string(i) + out.extension().string());
  return p;
}

namespace cmd_detail {

struct Run {
  RunConfig cfg;
  std::filesystem::path out_dir;
};

inline Run prepare(const std::string& config_path) {
  Run r{load_config(config_path), {}};
  if (const char* env = std::getenv("DLF_OUT_DIR"); env && *env) r.cfg.logging.out_dir = env;
  r.out_dir = r.cfg.logging.out_dir;
  std::filesystem::create_directories(r.out_dir);
  r.cfg.logging.out_dir = std::filesystem::absolute(r.out_dir).string();
  std::ofstream(r.out_dir / "config.resolved.json") << to_json(r.cfg).dump(2) << '\n';
  return r;
}

inline void require_splits(const Split& s, bool need_test) {
  if (s.dev.empty()) throw ConfigError("dataset.sizes", "dev split must be non-empty");
  if (need_test && s.test.empty()) throw ConfigError("dataset.sizes", "test split must be non-empty");
}

template <class F>
int guarded(std::ostream& err, F&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "invalid config: " << e.what() << '\n';
    return exit_code::invalid;
  } catch (const ParseError& e) {
    err << "data error: " << e.what() << '\n';
    return exit_code::invalid;
  } catch (const ShapeError& e) {
    err << "shape error: " << e.what() << '\n';
    return exit_code::invalid;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_code::failure;
  }
}

inline void dump_phi_trace(const TeacherParams& theta, const Split& data, const MetaConfig& m, const LossSpec& loss,
                           std::size_t every, const std::filesystem::path& dir) {
  if (every == 0) return;
  StudentRunOptions opt;
  opt.record = false;
  opt.on_step = [&](std::size_t t, const StateVector&, const LossCoefficients& phi) {
    if (t % every == 0) write_phi_csv(dir / ("phi_step" + std::to_string(t) + ".csv"), phi);
  };
  run_student(&theta, data.train, data.dev, m, loss, opt);
}

}  // namespace cmd_detail

inline int cmd_train_teacher(const std::string& config_path, std::ostream& out = std::cout,
                             std::ostream& err = std::cerr) {
  return cmd_detail::guarded(err, [&] {
    auto [cfg, dir] = cmd_detail::prepare(config_path);
    if (!teacher_controlled(cfg.loss.family))
      throw ConfigError("loss.family", "train-teacher needs a bilinear or diagonal loss");
    if (cfg.inner.momentum != 0.0)
      throw ConfigError("inner.momentum", "the differentiated inner loop is plain SGD; momentum must be 0");
    const Split data = build_data(cfg.dataset);
    cmd_detail::require_splits(data, false);
    const MetaConfig m = meta_config(cfg);
    TeacherParams theta0 = initial_teacher(cfg);

    std::ofstream metrics(dir / "metrics.jsonl", std::ios::trunc);
    auto observer = [&](const TeacherStepRecord& r) {
      const nlohmann::json j = {{"step", r.step},
                                {"dev_smoothed_metric", r.dev_smoothed_metric},
                                {"dev_accuracy", r.dev_accuracy},
                                {"grad_norm", r.grad_norm}};
      metrics << j.dump() << '\n' << std::flush;
      out << "teacher step " << r.step << "  dev_metric " << r.dev_smoothed_metric << "  dev_acc "
          << r.dev_accuracy << "  |grad| " << r.grad_norm << '\n';
    };
    const TeacherTraining trained = train_teacher(theta0, data.train, data.dev, m, cfg.loss, observer);
    save_checkpoint((dir / "teacher.ckpt").string(), trained.theta);
    cmd_detail::dump_phi_trace(trained.theta, data, m, cfg.loss, cfg.logging.dump_phi_every, dir);
    out << "wrote " << (dir / "teacher.ckpt").string() << '\n';
    return exit_code::ok;
  });
}

/// Final test error in percent for one student run described by `cfg`.
struct StudentReport {
  double test_error_percent = 0.0;
  double dev_accuracy = 0.0;
};

inline StudentReport train_and_evaluate(const RunConfig& cfg, const Split& data, const TeacherParams* teacher,
                                        const std::filesystem::path& phi_dir = {}) {
  const MetaConfig m = meta_config(cfg);
  StudentRunOptions opt;
  opt.record = false;
  opt.momentum = cfg.inner.momentum;
  const std::size_t every = cfg.logging.dump_phi_every;
  if (teacher && every > 0 && !phi_dir.empty())
    opt.on_step = [&](std::size_t t, const StateVector&, const LossCoefficients& phi) {
      if (t % every == 0) write_phi_csv(phi_dir / ("phi_step" + std::to_string(t) + ".csv"), phi);
    };
  const InnerRun run = run_student(teacher, data.train, data.dev, m, cfg.loss, opt);
  StudentReport rep;
  const Tensor test_probs = probs_at(run.student, run.student.omega, data.test.inputs);
  rep.test_error_percent = 100.0 * (1.0 - accuracy(predict(test_probs), data.test.labels));
  if (!data.dev.empty())
    rep.dev_accuracy = accuracy(predict(probs_at(run.student, run.student.omega, data.dev.inputs)), data.dev.labels);
  return rep;
}

inline int cmd_train_student(const std::string& config_path, const std::string& teacher_override = {},
                             std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  return cmd_detail::guarded(err, [&] {
    auto [cfg, dir] = cmd_detail::prepare(config_path);
    std::optional<TeacherParams> teacher;
    if (teacher_controlled(cfg.loss.family)) {
      const std::string path = teacher_override.empty() ? cfg.teacher.checkpoint : teacher_override;
      if (path.empty()) throw ConfigError("teacher.checkpoint", std::string("required for loss family ") + to_string(cfg.loss.family));
      try {
        teacher = load_checkpoint(path);
      } catch (const Error& e) {
        throw ConfigError("teacher.checkpoint", e.what());
      }
    }
    const Split data = build_data(cfg.dataset);
    cmd_detail::require_splits(data, true);
    if (teacher) check_teacher_fits(*teacher, data.train, cfg.loss);
    const StudentReport rep = train_and_evaluate(cfg, data, teacher ? &*teacher : nullptr, dir);

    char pct[32];
    std::snprintf(pct, sizeof pct, "%.2f", rep.test_error_percent);
    const nlohmann::json j = {{"loss", to_string(cfg.loss.family)},
                              {"momentum", cfg.inner.momentum},
                              {"test_error", std::stod(pct)},
                              {"dev_accuracy", rep.dev_accuracy}};
    std::ofstream(dir / "metrics.jsonl", std::ios::trunc) << j.dump() << '\n';
    out << "test error: " << pct << "%\n";
    return exit_code::ok;
  });
}

inline int cmd_gradcheck(const std::string& config_path, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  return cmd_detail::guarded(err, [&] {
    auto [cfg, dir] = cmd_detail::prepare(config_path);
    if (!teacher_controlled(cfg.loss.family))
      throw ConfigError("loss.family", "gradcheck needs a bilinear or diagonal loss");
    if (cfg.inner.momentum != 0.0) throw ConfigError("inner.momentum", "must be 0 for gradcheck");
    const Split data = build_data(cfg.dataset);
    cmd_detail::require_splits(data, false);
    const MetaConfig m = meta_config(cfg);
    const TeacherParams theta = initial_teacher(cfg);
    const std::size_t n = theta.params().total_len();
    if (n > cfg.gradcheck.max_params)
      throw ConfigError("gradcheck.max_params", "teacher has " + std::to_string(n) +
                                                    " parameters; the finite-difference oracle is limited to " +
                                                    std::to_string(cfg.gradcheck.max_params));

    InnerRun run = inner_train(theta, data.train, data.dev, m, cfg.loss);
    if (cfg.gradcheck.negate_eta)
      for (double& e : run.trajectory.etas) e = -e;
    const ParamVector rmd = rmd_hypergradient(theta, run.trajectory, data.train, data.dev, m, cfg.loss);
    const FdResult fd = fd_oracle_detailed(theta, m, data.train, data.dev, cfg.loss,
                                           {cfg.gradcheck.epsilon, cfg.gradcheck.freeze_states});

    const auto a = rmd.flatten(), b = fd.grad.flatten();
    double max_rel = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (std::abs(b[i]) > cfg.gradcheck.coord_floor) max_rel = std::max(max_rel, std::abs(a[i] - b[i]) / std::abs(b[i]));
    }
    const double cos = cosine_similarity(rmd, fd.grad);
    const bool pass = max_rel < cfg.gradcheck.max_rel_error && cos > cfg.gradcheck.min_cosine;
    out << "params " << n << "\nmax_rel_error " << format_double(max_rel) << "\ncosine " << format_double(cos)
        << "\nstate_changes " << fd.state_changes << '\n'
        << (pass ? "gradcheck passed" : "gradcheck FAILED") << '\n';
    const nlohmann::json j = {{"params", n},
                              {"max_rel_error", max_rel},
                              {"cosine", cos},
                              {"state_changes", fd.state_changes},
                              {"passed", pass}};
    std::ofstream(dir / "gradcheck.json") << j.dump(2) << '\n';
    return pass ? exit_code::ok : exit_code::gradcheck_failed;
  });
}

inline int cmd_dump_coefficients(const std::string& checkpoint, const std::string& states_file, const std::string& out_csv,
                                 std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  return cmd_detail::guarded(err, [&] {
    TeacherParams theta;
    try {
      theta = load_checkpoint(checkpoint);
    } catch (const Error& e) {
      throw ConfigError("checkpoint", e.what());
    }
    const auto states = read_states_file(states_file);
    for (std::size_t i = 0; i < states.size(); ++i)
      if (states[i].size() != theta.state_dim)
        throw ConfigError("states:" + std::to_string(i), "state has " + std::to_string(states[i].size()) +
                                                             " entries, teacher expects " +
                                                             std::to_string(theta.state_dim));
    const std::filesystem::path base(out_csv);
    if (base.has_parent_path()) std::filesystem::create_directories(base.parent_path());
    for (std::size_t i = 0; i < states.size(); ++i) {
      StateVector s;
      s.values = Tensor({1, states[i].size()}, states[i]);
      const auto path = indexed_output(base, i, states.size());
      write_phi_csv(path, teacher_forward(theta, s));
      out << "wrote " << path.string() << '\n';
    }
    return exit_code::ok;
  });
}

}  // namespace dlf
