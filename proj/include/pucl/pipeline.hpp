#pragma once

// The iterative inference loop: policy learning against the current
// constraint, trajectory filtering, constraint learning with memory replay,
// and the evaluation metrics.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "pucl/constraint.hpp"
#include "pucl/envs.hpp"
#include "pucl/nn.hpp"
#include "pucl/policy.hpp"

namespace pucl {

struct DemoSet {
  std::vector<Trajectory> trajectories;
  double return_mean = 0.0;
  double return_std = 0.0;  // population standard deviation

  void recompute_stats();
  std::vector<PointState> states() const;
};

struct MemoryEntry {
  PointState state;
  double zeta = 0.0;           // at capture time
  std::size_t iteration = 0;   // capture iteration
};

struct MemoryBuffer {
  std::vector<MemoryEntry> entries;

  std::size_t size() const { return entries.size(); }
  std::vector<PointState> states() const;
};

// Settings for the entropy-regularized expert trained on the true constraint.
struct ExpertConfig {
  std::size_t trajectories = 20;
  std::size_t min_updates = 40;
  std::size_t max_updates = 150;
  // Stop once the mean penalized return of the last window improves on the window
  // before it by less than `plateau_tolerance`.
  std::size_t plateau_window = 10;
  double plateau_tolerance = 0.01;
  double penalty_weight = 0.5;
  double entropy_coef = 0.01;
  std::size_t max_attempts = 2000;
  // Roll every other demonstration out with the expert composed with the
  // point reflection (x, y, psi) -> (-x, -y, psi + pi). Only valid for
  // environments invariant under that map (point-circle).
  bool symmetrize = false;

  void validate() const;
  friend bool operator==(const ExpertConfig&, const ExpertConfig&) = default;
};

// Constraint-model construction settings.
struct ConstraintModelConfig {
  double label_frequency = 0.4;
  // Empty: derive d = 0.5 f.
  std::optional<double> decision_threshold;
  // Re-estimate f as max zeta over demonstrations after each constraint update.
  bool estimate_label_frequency = false;
  ConstraintInput input = ConstraintInput::position;
  double input_scale = 1.0;

  double threshold() const;
  void validate() const;
  friend bool operator==(const ConstraintModelConfig&, const ConstraintModelConfig&) = default;
};

struct RunConfig {
  EnvSpec env = EnvSpec::point_circle();
  PpoConfig ppo;
  ConstraintTrainConfig constraint;
  ConstraintModelConfig constraint_model;
  ExpertConfig expert;
  std::size_t iterations = 25;
  double filter_alpha = 1.0;
  std::size_t memory_fraction = 2;
  bool cmr_enabled = true;
  bool filter_enabled = true;
  std::size_t eval_episodes = 20;
  std::size_t iou_resolution = 200;
  bool iou_include_known = true;
  double leaky_slope = 0.01;

  static RunConfig point_circle();
  static RunConfig point_obstacle();

  void validate() const;
  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

struct ExpertResult {
  DemoSet demos;
  PolicyModel expert;
  std::vector<PpoStats> training;
  std::size_t rejected = 0;
};

ExpertResult generate_expert(const RunConfig& cfg, nn::Rng& rng);

// Keeps trajectories whose return is >= mean - alpha * std of the demonstrations.
std::vector<Trajectory> filter_trajectories(std::span<const Trajectory> trajs,
                                            const DemoSet& demos, double alpha);

// Appends the floor(n / memory_fraction) lowest-zeta states among the n states
// of `trajs` the model classifies as infeasible. Returns the number appended.
std::size_t update_memory(const ConstraintModel& model, std::span<const Trajectory> trajs,
                          MemoryBuffer& buffer, std::size_t memory_fraction,
                          std::size_t iteration);

// Intersection over union of predicted and true infeasible lattice points;
// 1 when both are empty. With `include_known`, the known region counts as
// predicted infeasible; without it, lattice points in the known region are skipped.
double metric_iou(const ConstraintModel& model, const EnvSpec& spec, std::size_t resolution,
                  bool include_known = true);

// IoU from explicit predicted/true masks.
double iou(const std::vector<bool>& predicted, const std::vector<bool>& truth);

using ActionFn = std::function<PointAction(const PointState&, nn::Rng&)>;

struct ViolationReport {
  double violation_rate = 0.0;
  double mean_return = 0.0;
  std::size_t steps = 0;
};

ViolationReport metric_violation(const ActionFn& act, const EnvSpec& spec, std::size_t episodes,
                                 nn::Rng& rng);
ViolationReport metric_violation(const PolicyModel& policy, const EnvSpec& spec,
                                 std::size_t episodes, nn::Rng& rng);

struct IterationReport {
  std::size_t iteration = 0;
  std::size_t timesteps_cumulative = 0;
  double iou = 0.0;
  double violation_rate = 0.0;
  double mean_return = 0.0;
  std::size_t n_sampled_trajectories = 0;
  std::size_t n_filtered_trajectories = 0;
  std::size_t memory_size = 0;
  double f = 0.0;
  double d = 0.0;
  bool constraint_updated = false;
  double filter_threshold = 0.0;
  // Lowest return among trajectories handed to the constraint learner.
  std::optional<double> min_filtered_return;
};

inline constexpr const char* kMetricsHeader =
    "iteration,timesteps_cumulative,iou,violation_rate,mean_return,n_filtered_trajectories,"
    "memory_size,f,d";

std::string format_metrics_row(const IterationReport& r);

struct IcrlHooks {
  std::function<void(const PpoStats&)> on_ppo_update;
  std::function<void(const IterationReport&, const ConstraintModel&, const PolicyModel&,
                     const MemoryBuffer&)>
      on_iteration;
};

struct IcrlResult {
  ConstraintModel constraint;
  PolicyModel policy;
  MemoryBuffer memory;
  std::vector<IterationReport> reports;
};

struct IcrlOptions {
  // Start from this model instead of a fresh one.
  std::optional<ConstraintModel> initial_constraint;
  // Skip every constraint update (control runs with a known constraint).
  bool freeze_constraint = false;
};

IcrlResult run_icrl(const RunConfig& cfg, const DemoSet& demos, std::uint64_t seed,
                    const IcrlHooks& hooks = {}, const IcrlOptions& options = {});

// Seeds a generator from (seed, stream) so metric rollouts do not perturb training.
nn::Rng derived_rng(std::uint64_t seed, std::uint64_t stream);

}  // namespace pucl
