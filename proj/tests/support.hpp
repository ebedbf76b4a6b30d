#pragma once

// Shared fixtures for the unit suites and the acceptance runner.

#include <cmath>
#include <random>
#include <vector>

#include "pucl/envs.hpp"
#include "pucl/pipeline.hpp"

namespace pucl::testing {

// Selected-completely-at-random PU sample: states uniform over `box`, a state is
// positive when `positive(s)` holds, and each positive is labeled with
// probability `f`. Labeled states go to `labeled`, everything else to `unlabeled`.
struct ScarSample {
  std::vector<PointState> labeled;
  std::vector<PointState> unlabeled;
};

template <class Pred>
ScarSample scar_sample(const Box& box, std::size_t n, double f, Pred positive, Rng& rng) {
  std::uniform_real_distribution<double> ux(box.x_min, box.x_max);
  std::uniform_real_distribution<double> uy(box.y_min, box.y_max);
  std::bernoulli_distribution label(f);
  ScarSample out;
  for (std::size_t i = 0; i < n; ++i) {
    const PointState s{ux(rng), uy(rng), 0.0};
    if (positive(s) && label(rng)) out.labeled.push_back(s);
    else out.unlabeled.push_back(s);
  }
  return out;
}

// Constant-turn trajectories from fresh resets: a cheap stand-in for expert demos.
inline DemoSet scripted_demos(const EnvSpec& spec, std::size_t count, double speed, double omega,
                              Rng& rng) {
  DemoSet out;
  for (std::size_t k = 0; k < count; ++k) {
    Trajectory tr;
    PointState s = env_reset(spec, rng);
    tr.start = s;
    const PointAction a = clamp_action({speed, k % 2 ? -omega : omega});
    for (std::size_t t = 0;; ++t) {
      const StepOutcome o = env_step(spec, s, a, t);
      tr.push({t, o.next_state, a, o.reward, o.true_violation});
      if (o.done) break;
      s = o.next_state;
    }
    out.trajectories.push_back(std::move(tr));
  }
  out.recompute_stats();
  return out;
}

// Trajectory visiting the given states in order; rewards are the state index.
inline Trajectory path_through(const std::vector<PointState>& states) {
  Trajectory tr;
  for (std::size_t t = 0; t < states.size(); ++t) tr.push({t, states[t], {}, static_cast<double>(t), false});
  if (!states.empty()) tr.start = states.front();
  return tr;
}

}  // namespace pucl::testing
