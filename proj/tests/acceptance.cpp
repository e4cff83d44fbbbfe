// Acceptance suite: one PASS/FAIL line per criterion.
//   dlf_acceptance            run all criteria
//   dlf_acceptance 2 5        run selected criteria
// Exit status is 0 iff every selected criterion passed.
#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dlf/commands.hpp"
#include "oracles.hpp"
#include "toy.hpp"

using namespace dlf;
using namespace dlf::testing;

namespace {

// Pinned tolerances.
constexpr double kGradRelTol = 1e-6;
constexpr double kGradStep = 1e-5;
constexpr double kHvpRelTol = 1e-4;
constexpr double kHvpStep = 1e-4;
constexpr double kSymmetryTol = 1e-8;
constexpr double kAutodiffSeconds = 10.0;

constexpr double kHyperCosine = 0.999;
constexpr double kHyperCoordRel = 1e-3;
constexpr double kHyperCoordFloor = 1e-8;
constexpr double kFdEpsilon = 1e-3;
constexpr double kHyperSeconds = 60.0;

constexpr double kConstantMetricTol = 1e-12;

constexpr double kIdentityCosineTol = 1e-9;
constexpr std::size_t kIdentityExamples = 100;

constexpr std::size_t kTeacherSeeds = 5;
constexpr std::size_t kTeacherWinsNeeded = 4;
constexpr double kTeacherSeconds = 600.0;

constexpr std::size_t kMnistSeeds = 3;
constexpr double kMnistMarginPoints = 0.3;
constexpr double kMnistSeconds = 1800.0;

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::filesystem::path source_dir() { return DLF_SOURCE_DIR; }

RunConfig with_seed_offset(RunConfig c, std::uint64_t s) {
  c.dataset.seed += s;
  c.student.init_seed += s;
  c.inner.schedule_seed += s;
  c.inner.subsample_seed += s;
  c.teacher.init_seed += s;
  return c;
}

// ---- 1 ---------------------------------------------------------------------

Outcome autodiff_orders() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(20240601);
  auto pick = [&](std::size_t lo, std::size_t hi) { return lo + std::size_t(rng() % (hi - lo + 1)); };
  double worst_grad = 0, worst_hvp = 0, worst_cross = 0, worst_sym = 0;
  std::size_t max_params = 0;

  for (int inst = 0; inst < 5; ++inst) {
    const std::size_t in = pick(2, 6), hid = pick(3, 8), out = pick(2, 4), n = pick(4, 8);
    MlpStudent arch = MlpStudent::init({in, hid, out}, 100 + inst);
    const ParamVector omega = random_like(arch.omega, 200 + inst, 0.7);
    max_params = std::max(max_params, omega.total_len());
    const Tensor x = random_tensor({n, in}, 300 + inst);
    Labels y(n);
    for (auto& l : y) l = rng() % out;

    auto loss = [&](const ad::VarList& w) { return cross_entropy_loss(forward_probs(arch, w, ad::constant(x)), y); };
    auto value = [&](const ParamVector& w) { return ad::evaluate(loss, w); };
    auto gradient = [&](const ParamVector& w) { return ad::grad(loss, w); };

    worst_grad = std::max(worst_grad, rel_error(ad::grad(loss, omega), central_difference(value, omega, kGradStep)));

    const ParamVector u = random_like(omega, 400 + inst), v = random_like(omega, 500 + inst);
    worst_hvp = std::max(worst_hvp, rel_error(ad::hvp(loss, omega, v), directional_difference(gradient, omega, v, kHvpStep)));
    worst_sym = std::max(worst_sym, std::abs(dot(ad::hvp(loss, omega, u), v) - dot(ad::hvp(loss, omega, v), u)));

    // first layer as `a`, second layer as `b`
    ParamVector a, b;
    for (std::size_t i = 0; i < omega.num_segments(); ++i) (i < 2 ? a : b).add(omega.name(i), omega[i]);
    auto split_loss = [&](const ad::VarList& as, const ad::VarList& bs) {
      ad::VarList w = as;
      w.insert(w.end(), bs.begin(), bs.end());
      return loss(w);
    };
    const ParamVector vb = random_like(b, 600 + inst);
    auto grad_a_at = [&](const ParamVector& bb) {
      return ad::grad([&](const ad::VarList& as) { return split_loss(as, ad::leaves(bb, false)); }, a);
    };
    ParamVector bp = b, bm = b;
    bp.axpy(kHvpStep, vb);
    bm.axpy(-kHvpStep, vb);
    ParamVector fd_cross = grad_a_at(bp);
    fd_cross.axpy(-1.0, grad_a_at(bm)).scale(1.0 / (2.0 * kHvpStep));
    worst_cross = std::max(worst_cross, rel_error(ad::hvp_cross(split_loss, a, b, vb), fd_cross));
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = worst_grad < kGradRelTol && worst_hvp < kHvpRelTol && worst_cross < kHvpRelTol && worst_sym < kSymmetryTol &&
           max_params <= 500 && secs < kAutodiffSeconds;
  o.detail = "grad rel " + fmt("%.2e", worst_grad) + ", hvp rel " + fmt("%.2e", worst_hvp) + ", hvp_cross rel " +
             fmt("%.2e", worst_cross) + ", symmetry " + fmt("%.2e", worst_sym) + ", max params " +
             std::to_string(max_params) + ", " + fmt("%.2fs", secs);
  return o;
}

// ---- 2 ---------------------------------------------------------------------

Outcome hypergradient_vs_oracle() {
  const auto t0 = Clock::now();
  const ToyInstance toy = make_toy(0);
  const InnerRun run = inner_train(toy.theta, toy.train, toy.dev, toy.cfg, toy.loss);
  const ParamVector rmd = rmd_hypergradient(toy.theta, run.trajectory, toy.train, toy.dev, toy.cfg, toy.loss);
  const FdResult fd = fd_oracle_detailed(toy.theta, toy.cfg, toy.train, toy.dev, toy.loss, {kFdEpsilon, false});
  const double cos = cosine_similarity(rmd, fd.grad);
  const double coord = max_coord_rel_error(rmd, fd.grad, kHyperCoordFloor);
  const double secs = seconds_since(t0);
  return {cos > kHyperCosine && coord < kHyperCoordRel && secs < kHyperSeconds,
          "cosine " + fmt("%.9f", cos) + ", max coord rel " + fmt("%.2e", coord) + ", params " +
              std::to_string(rmd.total_len()) + ", fd runs with state flips " + std::to_string(fd.state_changes) +
              ", " + fmt("%.2fs", secs)};
}

// ---- 3 ---------------------------------------------------------------------

Outcome degenerate_exactness() {
  ToyInstance toy = make_toy(1);
  toy.cfg.T = 0;
  auto run = inner_train(toy.theta, toy.train, toy.dev, toy.cfg, toy.loss);
  const double zero_horizon = max_abs(rmd_hypergradient(toy.theta, run.trajectory, toy.train, toy.dev, toy.cfg, toy.loss));

  toy = make_toy(1);
  toy.cfg.eta = EtaSchedule::constant(0.0);
  run = inner_train(toy.theta, toy.train, toy.dev, toy.cfg, toy.loss);
  const double zero_eta = max_abs(rmd_hypergradient(toy.theta, run.trajectory, toy.train, toy.dev, toy.cfg, toy.loss));

  const Tensor constant_metric({2, 2}, 1.0);
  MlpStudent student = MlpStudent::init({2, 4, 2}, 9);
  student.omega = random_like(student.omega, 10, 0.8);
  const double metric_grad = max_abs(dev_gradient(student, toy.dev, &constant_metric));

  return {zero_horizon == 0.0 && zero_eta == 0.0 && metric_grad < kConstantMetricTol,
          "T=0 max|dtheta| " + fmt("%.1e", zero_horizon) + ", eta=0 max|dtheta| " + fmt("%.1e", zero_eta) +
              ", constant-metric max|grad| " + fmt("%.2e", metric_grad)};
}

// ---- 4 ---------------------------------------------------------------------

Outcome identity_equivalence() {
  const std::size_t in = 5, classes = 4;
  MlpStudent arch = MlpStudent::init({in, 7, classes}, 77);
  arch.omega = random_like(arch.omega, 78, 0.6);
  const Tensor x = random_tensor({kIdentityExamples, in}, 79);
  std::mt19937_64 rng(80);
  const ad::Var identity = ad::constant(LossCoefficients::identity(classes).values);
  double worst = 0.0;
  for (std::size_t i = 0; i < kIdentityExamples; ++i) {
    Tensor xi({1, in});
    std::copy_n(x.data.begin() + std::ptrdiff_t(i * in), in, xi.data.begin());
    const Labels yi{std::size_t(rng() % classes)};
    auto probs = [&](const ad::VarList& w) { return forward_probs(arch, w, ad::constant(xi)); };
    const ParamVector gb = ad::grad([&](const ad::VarList& w) { return bilinear_loss(probs(w), yi, identity); }, arch.omega);
    const ParamVector gc = ad::grad([&](const ad::VarList& w) { return cross_entropy_loss(probs(w), yi); }, arch.omega);
    worst = std::max(worst, std::abs(1.0 - cosine_similarity(gb, gc)));
  }
  return {worst <= kIdentityCosineTol, "max |1 - cosine| over " + std::to_string(kIdentityExamples) +
                                           " examples " + fmt("%.2e", worst)};
}

// ---- 5 ---------------------------------------------------------------------

Outcome teacher_improves_blobs() {
  const auto t0 = Clock::now();
  const RunConfig base = load_config((source_dir() / "configs" / "blobs_imbalanced.json").string());
  std::size_t acc_wins = 0, metric_ups = 0;
  std::ostringstream per_seed;
  for (std::uint64_t s = 0; s < kTeacherSeeds; ++s) {
    const RunConfig cfg = with_seed_offset(base, s);
    const Split data = build_data(cfg.dataset);
    const MetaConfig m = meta_config(cfg);
    const TeacherTraining trained = train_teacher(initial_teacher(cfg), data.train, data.dev, m, cfg.loss);

    StudentRunOptions opt;
    opt.record = false;
    const InnerRun taught = run_student(&trained.theta, data.train, data.dev, m, cfg.loss, opt);
    const InnerRun plain = run_student(nullptr, data.train, data.dev, m, LossSpec::cross_entropy(), opt);
    const double acc_taught = accuracy(predict(probs_at(taught.student, taught.student.omega, data.dev.inputs)), data.dev.labels);
    const double acc_ce = accuracy(predict(probs_at(plain.student, plain.student.omega, data.dev.inputs)), data.dev.labels);
    const double m0 = trained.history.front().dev_smoothed_metric, m_last = trained.history.back().dev_smoothed_metric;
    acc_wins += acc_taught >= acc_ce;
    metric_ups += m_last >= m0;
    per_seed << "\n    seed " << s << ": dev acc taught " << fmt("%.3f", acc_taught) << " vs ce " << fmt("%.3f", acc_ce)
             << ", dev metric step 0 " << fmt("%.4f", m0) << " -> last " << fmt("%.4f", m_last);
  }
  const double secs = seconds_since(t0);
  return {acc_wins >= kTeacherWinsNeeded && metric_ups >= kTeacherWinsNeeded && secs < kTeacherSeconds,
          "taught >= ce in " + std::to_string(acc_wins) + "/" + std::to_string(kTeacherSeeds) +
              ", dev metric up in " + std::to_string(metric_ups) + "/" + std::to_string(kTeacherSeeds) + ", " +
              fmt("%.1fs", secs) + per_seed.str()};
}

// ---- 6 ---------------------------------------------------------------------

Outcome mnist_directional() {
  const auto t0 = Clock::now();
  const RunConfig base = load_config((source_dir() / "configs" / "mnist_subset.json").string());
  std::vector<double> taught_err, ce_err;
  std::size_t trend_ok = 0;
  std::ostringstream per_seed;
  for (std::uint64_t s = 0; s < kMnistSeeds; ++s) {
    const RunConfig cfg = with_seed_offset(base, s);
    const Split data = build_data(cfg.dataset);
    const MetaConfig m = meta_config(cfg);
    const TeacherTraining trained = train_teacher(initial_teacher(cfg), data.train, data.dev, m, cfg.loss);

    RunConfig ce_cfg = cfg;
    ce_cfg.loss = LossSpec::cross_entropy();
    taught_err.push_back(train_and_evaluate(cfg, data, &trained.theta).test_error_percent);
    ce_err.push_back(train_and_evaluate(ce_cfg, data, nullptr).test_error_percent);
    const bool trend = trained.history.back().dev_accuracy >= trained.history.front().dev_accuracy;
    trend_ok += trend;
    per_seed << "\n    seed " << s << ": test error taught " << fmt("%.2f%%", taught_err.back()) << " vs ce "
             << fmt("%.2f%%", ce_err.back()) << ", dev acc step 0 " << fmt("%.3f", trained.history.front().dev_accuracy)
             << " -> last " << fmt("%.3f", trained.history.back().dev_accuracy);
  }
  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
  };
  const double mt = median(taught_err), mc = median(ce_err);
  const double secs = seconds_since(t0);
  return {mt <= mc + kMnistMarginPoints && secs < kMnistSeconds,
          "median test error taught " + fmt("%.2f%%", mt) + " vs ce " + fmt("%.2f%%", mc) + " (+" +
              fmt("%.1f", kMnistMarginPoints) + "pp allowed), dev acc trend up in " + std::to_string(trend_ok) + "/" +
              std::to_string(kMnistSeeds) + ", " + fmt("%.1fs", secs) + per_seed.str()};
}

// ---- 7 ---------------------------------------------------------------------

Outcome replay_fidelity() {
  ToyInstance toy = make_toy(2);
  toy.cfg.T = 25;
  const InnerRun run = inner_train(toy.theta, toy.train, toy.dev, toy.cfg, toy.loss);
  const auto& tr = run.trajectory;
  std::size_t mismatched = 0;
  for (std::size_t t = 0; t < tr.steps(); ++t) {
    const ParamVector next = sgd_step(run.student, tr.omegas[t], toy.train.subset(tr.batches[t]), toy.loss,
                                      teacher_forward(toy.theta, tr.states[t]), tr.etas[t]);
    mismatched += !(next == tr.omegas[t + 1]);
  }
  const bool inner_same = inner_train(toy.theta, toy.train, toy.dev, toy.cfg, toy.loss).trajectory == tr;

  toy.cfg.teacher_steps = 3;
  const TeacherTraining a = train_teacher(toy.theta, toy.train, toy.dev, toy.cfg, toy.loss);
  const TeacherTraining b = train_teacher(toy.theta, toy.train, toy.dev, toy.cfg, toy.loss);
  bool history_same = a.history.size() == b.history.size();
  for (std::size_t k = 0; history_same && k < a.history.size(); ++k)
    history_same = a.history[k].dev_smoothed_metric == b.history[k].dev_smoothed_metric &&
                   a.history[k].dev_accuracy == b.history[k].dev_accuracy && a.history[k].grad_norm == b.history[k].grad_norm;
  const bool teacher_same = encode_checkpoint(a.theta) == encode_checkpoint(b.theta) && history_same;

  return {mismatched == 0 && inner_same && teacher_same,
          "replayed steps differing " + std::to_string(mismatched) + "/" + std::to_string(tr.steps()) +
              ", repeated inner run identical " + (inner_same ? "yes" : "no") + ", repeated teacher training identical " +
              (teacher_same ? "yes" : "no")};
}

// ---- 8 ---------------------------------------------------------------------

std::string bytes(std::initializer_list<int> v) {
  std::string s;
  for (int b : v) s.push_back(char(b));
  return s;
}

template <class F>
std::string parse_failure(F&& f, std::size_t& offset) {
  try {
    f();
  } catch (const ParseError& e) {
    offset = e.offset();
    return e.what();
  }
  return {};
}

Outcome idx_loader() {
  std::vector<std::string> failures;
  auto check = [&](bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  };

  const std::string label_file = bytes({0, 0, 8, 1, 0, 0, 0, 3, 7, 2, 1});
  check(idx::parse_labels(label_file) == Labels{7, 2, 1}, "label example");
  check(idx::encode_labels({7, 2, 1}) == label_file, "label encoding");
  const std::string image_file = bytes({0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 2, 0, 255, 0, 255});
  const Tensor img = idx::parse_images(image_file);
  check(img.shape == Shape{1, 4} && img.data == std::vector<double>{0, 1, 0, 1}, "image example");
  check(idx::encode_images(img, 2, 2) == image_file, "image encoding");

  std::size_t off = 99;
  std::string msg = parse_failure([] { idx::parse_labels(bytes({0, 0, 8, 2, 0, 0, 0, 1, 5})); }, off);
  check(msg.find("bad magic") != std::string::npos && off == 0, "bad magic");
  off = 99;
  msg = parse_failure([] { idx::parse_labels(bytes({0, 0, 8, 1, 0, 0, 0, 3, 7, 2})); }, off);
  check(msg.find("truncated payload") != std::string::npos && off == 10, "truncated labels");
  off = 99;
  msg = parse_failure([] { idx::parse_images(bytes({0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 2, 0, 255})); }, off);
  check(msg.find("truncated payload") != std::string::npos && off == 18, "truncated images");

  const auto dir = std::filesystem::temp_directory_path() / "dlf_acceptance_idx";
  std::filesystem::create_directories(dir);
  Dataset ds;
  ds.n_classes = 10;
  ds.inputs = Tensor({9, 20});
  std::mt19937_64 rng(8);
  for (double& v : ds.inputs.data) v = double(rng() % 256) / 255.0;
  for (int i = 0; i < 9; ++i) ds.labels.push_back(rng() % 10);
  for (const char* ext : {"", ".gz"}) {
    const std::string im = (dir / "img").string() + ext, lb = (dir / "lbl").string() + ext;
    write_mnist_idx(ds, im, lb, 4, 5);
    const Dataset back = load_mnist_idx(im, lb);
    check(back.inputs == ds.inputs && back.labels == ds.labels, std::string("round trip") + ext);
  }
  std::filesystem::remove_all(dir);

  std::string detail = failures.empty() ? "examples, error contracts and round trips exact" : "failed:";
  for (const auto& f : failures) detail += " [" + f + "]";
  return {failures.empty(), detail};
}

const std::map<int, std::pair<std::string, std::function<Outcome()>>> kCriteria = {
    {1, {"first/second-order autodiff", autodiff_orders}},
    {2, {"hypergradient vs finite-difference oracle", hypergradient_vs_oracle}},
    {3, {"degenerate exactness", degenerate_exactness}},
    {4, {"identity-coefficient equivalence", identity_equivalence}},
    {5, {"teacher improves student on imbalanced blobs", teacher_improves_blobs}},
    {6, {"MNIST-subset directional check", mnist_directional}},
    {7, {"replay fidelity", replay_fidelity}},
    {8, {"IDX loader", idx_loader}},
};

}  // namespace

int main(int argc, char** argv) {
  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) {
    const int k = std::atoi(argv[i]);
    if (!kCriteria.count(k)) {
      std::fprintf(stderr, "unknown criterion '%s'\n", argv[i]);
      return 2;
    }
    selected.push_back(k);
  }
  if (selected.empty())
    for (const auto& [k, _] : kCriteria) selected.push_back(k);

  bool all = true;
  for (int k : selected) {
    const auto& [name, run] = kCriteria.at(k);
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    all = all && o.pass;
    std::printf("[%s] criterion %d: %s: %s\n", o.pass ? "PASS" : "FAIL", k, name.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  return all ? 0 : 1;
}
