// Small bilevel instance shared by the engine tests and the acceptance suite:
// binary blobs, MLP 2-4-2, two attention keys, five-entry state, T=5, batch 4.
#pragma once

#include "dlf/data.hpp"
#include "dlf/meta.hpp"
#include "dlf/teacher.hpp"

namespace dlf::testing {

struct ToyInstance {
  Dataset train, dev;
  MetaConfig cfg;
  TeacherParams theta;
  LossSpec loss = LossSpec::bilinear();
};

inline ToyInstance make_toy(std::uint64_t seed = 0, LossSpec loss = LossSpec::bilinear()) {
  ToyInstance toy;
  const Dataset all = synth_blobs(48, 2, 2, 1.5, {0.5, 0.5}, 1000 + seed);
  auto sp = split(all, 32, 16, 0, 2000 + seed);
  toy.train = std::move(sp.train);
  toy.dev = std::move(sp.dev);
  toy.cfg.T = 5;
  toy.cfg.batch_size = 4;
  toy.cfg.eta = EtaSchedule::constant(0.1);
  toy.cfg.hidden_sizes = {4};
  toy.cfg.student_seed = 3000 + seed;
  toy.cfg.schedule_seed = 4000 + seed;
  toy.loss = loss;
  const auto kind = loss.family == LossFamily::diagonal ? CoefficientKind::diagonal : CoefficientKind::full_matrix;
  toy.theta = TeacherParams::init(kind, 2, 2, 5, 5000 + seed);
  return toy;
}

}  // namespace dlf::testing
