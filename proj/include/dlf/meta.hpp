// Bilevel training: the student's SGD trajectory under teacher-chosen losses,
// the reverse sweep that differentiates the dev metric of the final student
// with respect to the teacher, a brute-force finite-difference check of that
// gradient, and the outer teacher optimization loop.
#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "dlf/autodiff.hpp"
#include "dlf/data.hpp"
#include "dlf/student.hpp"
#include "dlf/teacher.hpp"
#include "dlf/tensor.hpp"

namespace dlf {

/// Piecewise-constant learning rate: values[i] applies from boundaries[i-1]
/// (inclusive) up to boundaries[i].
struct EtaSchedule {
  std::vector<std::size_t> boundaries;
  std::vector<double> values{0.1};

  static EtaSchedule constant(double eta) { return {{}, {eta}}; }

  void validate() const {
    if (values.size() != boundaries.size() + 1) throw Error("eta schedule: need one more value than boundaries");
    if (!std::is_sorted(boundaries.begin(), boundaries.end())) throw Error("eta schedule: boundaries must ascend");
  }

  double at(std::size_t t) const {
    const auto k = std::size_t(std::upper_bound(boundaries.begin(), boundaries.end(), t) - boundaries.begin());
    return values[k];
  }
};

struct MetaConfig {
  std::size_t T = 0;
  std::size_t batch_size = 1;
  EtaSchedule eta = EtaSchedule::constant(0.1);
  std::size_t teacher_steps = 0;
  std::vector<std::size_t> hidden_sizes;
  std::uint64_t student_seed = 1;
  std::uint64_t schedule_seed = 2;
  std::uint64_t subsample_seed = 3;
  std::size_t train_acc_subsample = 512;
  std::size_t dev_subsample = 0;  // 0: the dev objective uses the whole dev set
  bool reinit_per_teacher_step = true;
  AdamHyper adam;

  void validate() const {
    if (batch_size < 1) throw Error("batch_size must be >= 1");
    eta.validate();
  }

  std::vector<std::size_t> layer_sizes(std::size_t input_dim, std::size_t n_classes) const {
    std::vector<std::size_t> sizes{input_dim};
    sizes.insert(sizes.end(), hidden_sizes.begin(), hidden_sizes.end());
    sizes.push_back(n_classes);
    return sizes;
  }
};

/// omegas has T+1 entries; states, batches and etas have T.
struct TrajectoryRecord {
  std::vector<ParamVector> omegas;
  std::vector<StateVector> states;
  std::vector<std::vector<std::size_t>> batches;
  std::vector<double> etas;

  std::size_t steps() const { return etas.size(); }
  friend bool operator==(const TrajectoryRecord&, const TrajectoryRecord&) = default;
};

struct InnerRun {
  MlpStudent student;
  TrajectoryRecord trajectory;
};

inline std::uint64_t mix_seed(std::uint64_t base, std::uint64_t salt) {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// ---- student evaluation helpers -----------------------------------------

inline Tensor probs_at(const MlpStudent& arch, const ParamVector& omega, const Tensor& inputs) {
  ad::NoGradGuard guard;
  return forward_probs(arch, ad::leaves(omega, false), ad::constant(inputs)).value();
}

/// Mean over examples of sum_{y*} m(y*, y) p(y*|x); with the 0-1 metric, the
/// expected accuracy mean_b p(y_b | x_b).
inline double smoothed_metric(const Tensor& probs, const Labels& labels) {
  if (labels.empty()) return 0.0;
  if (probs.rows() != labels.size()) throw ShapeError("smoothed_metric: length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) acc += probs(i, labels[i]);
  return acc / double(labels.size());
}

/// Differentiable sum over a dataset of the smoothed metric. `metric`, when
/// given, is a (|Y|,|Y|) table indexed [true][predicted]; default 0-1.
inline ad::Var smoothed_metric_sum(const ad::Var& probs, const Labels& labels, const Tensor* metric = nullptr) {
  if (!metric) return ad::sum(ad::pick(probs, labels));
  const ad::Var rows = ad::gather_rows(ad::constant(*metric), labels);
  return ad::sum(ad::mul(rows, probs));
}

/// Gradient of the dev objective sum_dev m~ with respect to the student's weights.
inline ParamVector dev_gradient(const MlpStudent& student, const Dataset& dev, const Tensor* metric = nullptr) {
  if (dev.empty()) throw Error("dev_gradient: empty dev set");
  const ad::Var x = ad::constant(dev.inputs);
  return ad::grad([&](const ad::VarList& w) { return smoothed_metric_sum(forward_probs(student, w, x), dev.labels, metric); },
                  student.omega);
}

inline double dev_objective(const MlpStudent& student, const Dataset& dev) {
  return smoothed_metric(probs_at(student, student.omega, dev.inputs), dev.labels) * double(dev.size());
}

inline StateVector student_state(const MlpStudent& arch, const ParamVector& omega, std::size_t t, std::size_t T,
                                 const Dataset& train_probe, const Dataset& dev) {
  const double train_acc =
      train_probe.empty() ? 0.0 : accuracy(predict(probs_at(arch, omega, train_probe.inputs)), train_probe.labels);
  double dev_acc = 0.0;
  std::vector<double> precision(arch.n_classes(), 0.0);
  if (!dev.empty()) {
    const Labels preds = predict(probs_at(arch, omega, dev.inputs));
    dev_acc = accuracy(preds, dev.labels);
    precision = per_class_precision(preds, dev.labels, arch.n_classes());
  }
  return featurize_state(t, T, train_acc, dev_acc, precision);
}

/// Fixed seeded subsample used for the train-accuracy state feature.
inline Dataset train_probe_set(const Dataset& train, const MetaConfig& cfg) {
  if (train.size() <= cfg.train_acc_subsample) return train;
  std::mt19937_64 rng(cfg.subsample_seed);
  auto perm = seeded_permutation(train.size(), rng);
  perm.resize(cfg.train_acc_subsample);
  return train.subset(perm);
}

/// The dev examples the teacher objective sums over.
inline Dataset dev_objective_set(const Dataset& dev, const MetaConfig& cfg) {
  if (cfg.dev_subsample == 0 || dev.size() <= cfg.dev_subsample) return dev;
  std::mt19937_64 rng(mix_seed(cfg.subsample_seed, 1));
  auto perm = seeded_permutation(dev.size(), rng);
  perm.resize(cfg.dev_subsample);
  return dev.subset(perm);
}

// ---- one SGD step --------------------------------------------------------

inline ad::Var batch_loss(const MlpStudent& arch, const ad::VarList& omega, const Dataset& batch, const LossSpec& loss,
                          const ad::Var& phi) {
  return student_loss(loss, forward_probs(arch, omega, ad::constant(batch.inputs)), batch.labels, phi);
}

/// dL/domega for the batch under fixed coefficients (or a fixed loss when `phi` is empty).
inline ParamVector loss_gradient(const MlpStudent& arch, const ParamVector& omega, const Dataset& batch,
                                 const LossSpec& loss, const std::optional<LossCoefficients>& phi) {
  const ad::Var phi_var = phi ? ad::constant(phi->values) : ad::Var();
  return ad::grad([&](const ad::VarList& w) { return batch_loss(arch, w, batch, loss, phi_var); }, omega);
}

/// omega - eta * dL/domega
inline ParamVector sgd_step(const MlpStudent& arch, const ParamVector& omega, const Dataset& batch, const LossSpec& loss,
                            const std::optional<LossCoefficients>& phi, double eta) {
  ParamVector next = omega;
  next.axpy(-eta, loss_gradient(arch, omega, batch, loss, phi));
  return next;
}

// ---- forward training ----------------------------------------------------

struct StudentRunOptions {
  double momentum = 0.0;
  bool record = true;
  const std::vector<StateVector>* frozen_states = nullptr;  // replaces computed states when set
  std::function<void(std::size_t t, const StateVector&, const LossCoefficients&)> on_step;
};

inline void check_teacher_fits(const TeacherParams& theta, const Dataset& train, const LossSpec& loss) {
  theta.validate();
  const auto want = loss.family == LossFamily::diagonal ? CoefficientKind::diagonal : CoefficientKind::full_matrix;
  if (theta.kind != want) throw ShapeError("teacher coefficient kind does not match the loss family");
  if (theta.n_classes != train.n_classes) throw ShapeError("teacher class count does not match the data");
  if (theta.state_dim != 3 + train.n_classes)
    throw ShapeError("teacher state dimension must be 3 + n_classes = " + std::to_string(3 + train.n_classes));
}

/// Trains a fresh student for cfg.T steps. With a teacher, the loss at step t
/// uses Phi_t = teacher(s_t); otherwise `loss` must be a fixed family.
/// Momentum is only meaningful outside the differentiated path.
inline InnerRun run_student(const TeacherParams* teacher, const Dataset& train, const Dataset& dev, const MetaConfig& cfg,
                            const LossSpec& loss, const StudentRunOptions& opt = {}) {
  cfg.validate();
  loss.validate();
  train.validate();
  if (teacher_controlled(loss.family) && !teacher) throw Error("teacher-controlled loss requires a teacher");
  if (teacher) check_teacher_fits(*teacher, train, loss);
  if (opt.frozen_states && opt.frozen_states->size() != cfg.T) throw Error("frozen states must cover every step");

  InnerRun run;
  run.student = MlpStudent::init(cfg.layer_sizes(train.dim(), train.n_classes), cfg.student_seed);
  const MlpStudent& arch = run.student;
  const BatchSchedule schedule = make_schedule(train.size(), cfg.T, cfg.batch_size, cfg.schedule_seed);
  const bool need_state = teacher && !opt.frozen_states;
  const Dataset probe = need_state ? train_probe_set(train, cfg) : Dataset{};

  ParamVector omega = run.student.omega;
  ParamVector velocity = opt.momentum != 0.0 ? omega.zeros_like() : ParamVector{};
  auto& traj = run.trajectory;
  if (opt.record) traj.omegas.push_back(omega);

  for (std::size_t t = 0; t < cfg.T; ++t) {
    std::optional<LossCoefficients> phi;
    StateVector state;
    if (teacher) {
      state = opt.frozen_states ? (*opt.frozen_states)[t] : student_state(arch, omega, t, cfg.T, probe, dev);
      phi = teacher_forward(*teacher, state);
    }
    if (opt.on_step && phi) opt.on_step(t, state, *phi);
    const Dataset batch = train.subset(schedule.batches[t]);
    const double eta = cfg.eta.at(t);
    ParamVector g;
    try {
      g = loss_gradient(arch, omega, batch, loss, phi);
    } catch (const NumericalError& e) {
      throw Error("non-finite loss at inner step " + std::to_string(t) + " (" + e.what() + ")");
    }
    if (opt.momentum != 0.0) {
      velocity.scale(opt.momentum).axpy(1.0, g);
      omega.axpy(-eta, velocity);
    } else {
      omega.axpy(-eta, g);
    }
    if (opt.record) {
      traj.omegas.push_back(omega);
      traj.states.push_back(state);
      traj.batches.push_back(schedule.batches[t]);
      traj.etas.push_back(eta);
    }
  }
  run.student.omega = std::move(omega);
  return run;
}

/// Plain-SGD student training under the teacher, recording the full trajectory.
inline InnerRun inner_train(const TeacherParams& theta, const Dataset& train, const Dataset& dev, const MetaConfig& cfg,
                            const LossSpec& loss) {
  if (!teacher_controlled(loss.family)) throw Error("inner_train: loss family must be bilinear or diagonal");
  return run_student(&theta, train, dev, cfg, loss);
}

// ---- reverse sweep -------------------------------------------------------

struct RmdResult {
  ParamVector dtheta;
  std::vector<ParamVector> domega;  // domega[t] for t = 0..T when traced, else empty
};

/// Walks the trajectory backwards:
///   dtheta -= eta_t (d^2 L / dtheta domega_t) domega_{t+1}
///   domega_t = domega_{t+1} - eta_t (d^2 L / domega_t^2) domega_{t+1}
/// starting from domega_T = d(sum_dev m~)/domega_T.
inline RmdResult rmd_sweep(const TeacherParams& theta, const TrajectoryRecord& traj, const Dataset& train,
                           const Dataset& dev, const MetaConfig& cfg, const LossSpec& loss, bool trace = false,
                           const Tensor* metric = nullptr) {
  check_teacher_fits(theta, train, loss);
  const std::size_t T = traj.steps();
  if (traj.omegas.size() != T + 1 || traj.states.size() != T || traj.batches.size() != T)
    throw ShapeError("rmd: inconsistent trajectory record");
  for (const auto& s : traj.states)
    if (s.size() != theta.state_dim) throw ShapeError("rmd: trajectory states do not match the teacher");

  MlpStudent arch;
  arch.layer_sizes = cfg.layer_sizes(train.dim(), train.n_classes);
  arch.check_omega(traj.omegas.back());
  arch.omega = traj.omegas.back();

  RmdResult out;
  const ParamVector theta_params = theta.params();
  out.dtheta = theta_params.zeros_like();
  ParamVector domega = dev_gradient(arch, dev_objective_set(dev, cfg), metric);
  if (trace) out.domega.assign(T + 1, ParamVector{});
  if (trace) out.domega[T] = domega;

  for (std::size_t t = T; t-- > 0;) {
    const Dataset batch = train.subset(traj.batches[t]);
    const StateVector& state = traj.states[t];
    auto step_loss = [&](const ad::VarList& th, const ad::VarList& w) {
      const ad::Var phi = teacher_forward(theta, th[0], th[1], state);
      return batch_loss(arch, w, batch, loss, phi);
    };
    const ad::JointHvp h = ad::hvp_joint(step_loss, theta_params, traj.omegas[t], domega);
    out.dtheta.axpy(-traj.etas[t], h.cross);
    domega.axpy(-traj.etas[t], h.self);
    if (trace) out.domega[t] = domega;
  }
  return out;
}

inline ParamVector rmd_hypergradient(const TeacherParams& theta, const TrajectoryRecord& traj, const Dataset& train,
                                     const Dataset& dev, const MetaConfig& cfg, const LossSpec& loss) {
  return rmd_sweep(theta, traj, train, dev, cfg, loss).dtheta;
}

// ---- finite-difference oracle --------------------------------------------

struct FdOptions {
  double epsilon = 1e-3;
  // Hold the state features of the unperturbed run fixed in every perturbed run.
  bool freeze_states = false;
};

struct FdResult {
  ParamVector grad;
  std::size_t state_changes = 0;  // perturbed runs whose state sequence differed from the base run
};

/// Central differences of sum_dev m~(final student) in each teacher coordinate,
/// retraining the student from scratch for every perturbation.
inline FdResult fd_oracle_detailed(const TeacherParams& theta, const MetaConfig& cfg, const Dataset& train,
                                   const Dataset& dev, const LossSpec& loss, const FdOptions& opt = {}) {
  const Dataset dev_obj = dev_objective_set(dev, cfg);
  const InnerRun base = inner_train(theta, train, dev, cfg, loss);
  StudentRunOptions run_opt;
  run_opt.record = true;
  if (opt.freeze_states) run_opt.frozen_states = &base.trajectory.states;

  auto objective = [&](const std::vector<double>& flat, std::size_t& changes) {
    const TeacherParams perturbed = theta.with_params(theta.params().unflatten(flat));
    const InnerRun r = run_student(&perturbed, train, dev, cfg, loss, run_opt);
    if (!opt.freeze_states && r.trajectory.states != base.trajectory.states) ++changes;
    return dev_objective(r.student, dev_obj);
  };

  const std::vector<double> x0 = theta.params().flatten();
  std::vector<double> g(x0.size());
  FdResult out;
  for (std::size_t i = 0; i < x0.size(); ++i) {
    auto xp = x0, xm = x0;
    xp[i] += opt.epsilon;
    xm[i] -= opt.epsilon;
    std::size_t changes = 0;
    const double fp = objective(xp, changes), fm = objective(xm, changes);
    out.state_changes += changes;
    g[i] = (fp - fm) / (2.0 * opt.epsilon);
  }
  out.grad = theta.params().unflatten(g);
  return out;
}

inline ParamVector fd_oracle(const TeacherParams& theta, const MetaConfig& cfg, const Dataset& train, const Dataset& dev,
                             const LossSpec& loss, double epsilon) {
  return fd_oracle_detailed(theta, cfg, train, dev, loss, {epsilon, false}).grad;
}

// ---- teacher optimization ------------------------------------------------

struct TeacherStepRecord {
  std::size_t step = 0;
  double dev_smoothed_metric = 0.0;  // mean over dev examples, student of this step
  double dev_accuracy = 0.0;
  double grad_norm = 0.0;
};

struct TeacherTraining {
  TeacherParams theta;
  std::vector<TeacherStepRecord> history;
  AdamState adam;
};

/// Seeds for the inner run of teacher step k.
inline MetaConfig inner_config_for_step(const MetaConfig& cfg, std::size_t k) {
  MetaConfig c = cfg;
  if (cfg.reinit_per_teacher_step && k > 0) {
    c.student_seed = mix_seed(cfg.student_seed, k);
    c.schedule_seed = mix_seed(cfg.schedule_seed, k);
  }
  return c;
}

/// Repeats {fresh student -> inner_train -> reverse sweep -> Adam on -dtheta}.
inline TeacherTraining train_teacher(const TeacherParams& theta0, const Dataset& train, const Dataset& dev,
                                     const MetaConfig& cfg, const LossSpec& loss,
                                     const std::function<void(const TeacherStepRecord&)>& observer = {}) {
  TeacherTraining out{theta0, {}, AdamState::for_params(theta0.params(), cfg.adam)};
  for (std::size_t k = 0; k < cfg.teacher_steps; ++k) {
    try {
      const MetaConfig step_cfg = inner_config_for_step(cfg, k);
      const InnerRun run = inner_train(out.theta, train, dev, step_cfg, loss);
      ParamVector dtheta = rmd_hypergradient(out.theta, run.trajectory, train, dev, step_cfg, loss);

      TeacherStepRecord rec;
      rec.step = k;
      const Tensor dev_probs = probs_at(run.student, run.student.omega, dev.inputs);
      rec.dev_smoothed_metric = smoothed_metric(dev_probs, dev.labels);
      rec.dev_accuracy = accuracy(predict(dev_probs), dev.labels);
      rec.grad_norm = norm(dtheta);
      out.history.push_back(rec);
      if (observer) observer(rec);

      auto [next, adam] = adam_step(out.theta.params(), dtheta.scale(-1.0), std::move(out.adam));
      out.theta = out.theta.with_params(next);
      out.adam = std::move(adam);
    } catch (const Error& e) {
      throw Error("teacher step " + std::to_string(k) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace dlf
