#pragma once

// Gaussian-MLP actor and value critic trained with PPO on the penalized
// reward r - w_p c(s').

#include <array>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "pucl/constraint.hpp"
#include "pucl/envs.hpp"
#include "pucl/nn.hpp"

namespace pucl {

inline constexpr std::size_t kFeatureDim = 4;
inline constexpr std::size_t kActionDim = 2;

// (x/10, y/10, cos psi, sin psi)
std::array<double, kFeatureDim> policy_features(const PointState& s);
nn::Matrix policy_features(std::span<const PointState> states);

struct PolicyModel {
  nn::MlpParams actor;      // features -> tanh in (-1, 1), scaled by kActionLimit
  std::vector<double> log_std;
  nn::MlpParams value_net;  // features -> scalar
  double log_std_min = -5.0;
  double log_std_max = 1.0;

  static PolicyModel create(const std::vector<std::size_t>& policy_hidden,
                            const std::vector<std::size_t>& value_hidden, double init_log_std,
                            nn::Rng& rng, double leaky_slope = 0.01);

  PointAction mean_action(const PointState& s) const;
  double value(const PointState& s) const;
  void clamp_log_std();
  void validate() const;
};

struct PpoConfig {
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip_epsilon = 0.2;
  double entropy_coef = 0.01;
  double value_coef = 0.5;
  double learning_rate = 3e-4;
  double value_learning_rate = 3e-4;
  double max_grad_norm = 0.5;
  std::size_t epochs = 10;
  std::size_t minibatch_size = 256;
  std::size_t forward_iterations = 5;
  std::size_t forward_timesteps = 20000;
  double penalty_weight = 0.5;
  std::vector<std::size_t> policy_hidden{16, 16};
  std::vector<std::size_t> value_hidden{16, 16};
  double init_log_std = -1.6;
  // Lower clamp on log_std after every update.
  double log_std_min = -5.0;

  void validate() const;

  friend bool operator==(const PpoConfig&, const PpoConfig&) = default;
};

// r - w_p c with c in {0, 1}.
double penalized_reward(double reward, int c, double penalty_weight);

struct ActionSample {
  PointAction action;                        // clamped, what the environment sees
  std::array<double, kActionDim> raw{};      // pre-clamp Gaussian draw
  double log_prob = 0.0;                     // density of `raw`
};

double gaussian_log_prob(std::span<const double> x, std::span<const double> mean,
                         std::span<const double> log_std);

ActionSample sample_action(const PolicyModel& policy, const PointState& s, nn::Rng& rng);

struct RolloutBuffer {
  std::vector<PointState> states;       // state the action was taken in
  std::vector<std::array<double, kActionDim>> raw_actions;
  std::vector<PointAction> actions;     // clamped
  std::vector<double> log_probs;
  std::vector<double> values;
  std::vector<double> penalized_rewards;
  std::vector<double> raw_rewards;
  std::vector<int> constraint_flags;    // learned c(s') in {0, 1}
  std::vector<int> known_flags;         // known-region indicator of s'
  std::vector<int> true_violations;     // ground truth, metrics only
  std::vector<PointState> next_states;
  std::vector<int> dones;               // episode ends after this step
  std::vector<int> terminals;           // ended by reaching the goal
  std::vector<double> bootstrap_values; // V(s') for truncated ends, 0 otherwise
  std::vector<std::size_t> episode_starts;

  std::size_t size() const { return states.size(); }
  void clear();
  // Throws UsageError if the per-step sequences disagree in length or the
  // episode starts do not partition [0, size).
  void check_consistency() const;

  // Episodes that ended inside the buffer (goal or time limit), with raw rewards.
  std::vector<Trajectory> complete_episodes() const;
};

// Episodes run back to back from fresh resets until cfg.forward_timesteps
// transitions are stored; the constraint model is only read.
RolloutBuffer collect_rollouts(const PolicyModel& policy, const EnvSpec& env,
                               const ConstraintModel& constraint, const PpoConfig& cfg,
                               nn::Rng& rng);

struct GaeResult {
  std::vector<double> advantages;  // raw, not normalized
  std::vector<double> returns;     // advantages + values
};

GaeResult compute_gae(const RolloutBuffer& buffer, double gamma, double lambda);

// Zero mean, unit variance; a constant vector becomes all zeros.
void normalize_advantages(std::vector<double>& advantages);

struct PpoBatch {
  std::vector<PointState> states;
  std::vector<std::array<double, kActionDim>> raw_actions;
  std::vector<double> old_log_probs;
  std::vector<double> advantages;
  std::vector<double> returns;
};

struct PpoLoss {
  double total = 0.0;
  double surrogate = 0.0;    // mean clipped objective (higher is better)
  double policy_loss = 0.0;  // -surrogate
  double entropy = 0.0;
  double value_loss = 0.0;   // mean squared error
  double clip_fraction = 0.0;
  nn::MlpGrads actor_grads;
  std::vector<double> log_std_grads;
  nn::MlpGrads value_grads;
};

// total = -surrogate - entropy_coef * entropy + value_coef * value_loss.
PpoLoss ppo_loss(const PolicyModel& policy, const PpoBatch& batch, const PpoConfig& cfg);

struct PpoOptimizer {
  nn::AdamState actor;
  nn::VectorAdamState log_std;
  nn::AdamState value;

  static PpoOptimizer for_policy(const PolicyModel& policy);
};

struct PpoStats {
  std::size_t iteration = 0;
  double mean_raw_return = 0.0;
  double mean_penalized_return = 0.0;
  double entropy = 0.0;
  double value_loss = 0.0;
  double policy_loss = 0.0;
};

inline constexpr const char* kPpoStatsHeader =
    "iteration,mean_raw_return,mean_penalized_return,entropy,value_loss,policy_loss";

// cfg.epochs passes of shuffled minibatch steps. `iteration` only labels errors and stats.
PpoStats ppo_update(PolicyModel& policy, PpoOptimizer& optimizer, const RolloutBuffer& buffer,
                    const PpoConfig& cfg, nn::Rng& rng, std::size_t iteration = 0);

nlohmann::json to_json(const PolicyModel& policy);
PolicyModel policy_from_json(const nlohmann::json& doc);

}  // namespace pucl
