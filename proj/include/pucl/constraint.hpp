#pragma once

// Positive-unlabeled constraint learner. The network zeta(s) is trained as a
// labeled-vs-unlabeled classifier (demonstration states labeled, policy and
// memory states unlabeled); thresholding it at d = 0.5 f turns it into a
// feasible/infeasible classifier.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pucl/envs.hpp"
#include "pucl/nn.hpp"

namespace pucl {

inline constexpr double kZetaFloor = 1e-7;
inline constexpr double kZetaCeil = 1.0 - 1e-7;

// Constraint indicator: 1 = infeasible, 0 = feasible.
inline constexpr int kFeasible = 0;
inline constexpr int kInfeasible = 1;

enum class ConstraintInput {
  position,    // (x, y)
  full_state,  // (x, y, psi)
};

std::string to_string(ConstraintInput in);
ConstraintInput constraint_input_from_string(const std::string& name);

struct ConstraintModel {
  nn::MlpParams net;
  double label_frequency = 0.4;
  double decision_threshold = 0.2;
  ConstraintInput input = ConstraintInput::position;
  // Coordinates are multiplied by this before entering the network.
  double input_scale = 1.0;
  // When set, zeta reproduces the ground-truth constraint of this environment
  // instead of evaluating `net`.
  std::optional<EnvSpec> oracle;

  std::size_t input_dim() const { return input == ConstraintInput::position ? 2 : 3; }

  double zeta(const PointState& s) const;
  std::vector<double> zeta(std::span<const PointState> states) const;

  nn::Matrix features(std::span<const PointState> states) const;

  static ConstraintModel create(const std::vector<std::size_t>& hidden_sizes,
                                double label_frequency, double decision_threshold, nn::Rng& rng,
                                ConstraintInput input = ConstraintInput::position,
                                double input_scale = 1.0, double leaky_slope = 0.01);
  static ConstraintModel make_oracle(const EnvSpec& spec, double decision_threshold = 0.2);

  void validate() const;
};

int classify_zeta(double zeta, double threshold);
int classify(const ConstraintModel& model, const PointState& s);

// d = 0.5 f; f must lie in (0, 1].
double threshold_from_f(double f);

// max zeta over the demonstration states.
double estimate_label_frequency(const ConstraintModel& model, std::span<const PointState> demos);

// How the two BCE terms are averaged.
enum class LossWeighting {
  // -mean_D log zeta - mean_U log(1 - zeta): each set averaged on its own.
  per_set_mean,
  // Both sets averaged over |D| + |U|, i.e. plain BCE over the pooled sample.
  pooled,
};

std::string to_string(LossWeighting w);
LossWeighting loss_weighting_from_string(const std::string& name);

struct ConstraintLoss {
  double loss = 0.0;
  double positive_term = 0.0;
  double negative_term = 0.0;
  double regularizer_term = 0.0;
  nn::MlpGrads grads;
};

// loss = BCE(demos as 1, unlabeled as 0) - w_r mean_S zeta.
// Throws UsageError when either demos or unlabeled is empty.
ConstraintLoss constraint_loss(const ConstraintModel& model, std::span<const PointState> demos,
                               std::span<const PointState> unlabeled,
                               std::span<const PointState> regularizer_states,
                               double regularization_weight,
                               LossWeighting weighting = LossWeighting::per_set_mean);

struct ConstraintTrainConfig {
  std::vector<std::size_t> hidden_sizes{4};
  std::size_t backward_iterations = 20;
  double learning_rate = 0.03;
  double regularization_weight = 0.05;
  std::size_t regularizer_samples = 1000;
  Box regularizer_box{};
  LossWeighting weighting = LossWeighting::per_set_mean;
  // Start each inference iteration with fresh Adam moments.
  bool reset_optimizer = false;

  void validate() const;

  friend bool operator==(const ConstraintTrainConfig&, const ConstraintTrainConfig&) = default;
};

struct ConstraintTrainReport {
  std::size_t iterations = 0;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  std::vector<double> losses;
};

std::vector<PointState> sample_uniform_states(const Box& box, std::size_t n, nn::Rng& rng);

// Full-batch Adam on constraint_loss for cfg.backward_iterations steps; the
// regularizer states are redrawn from the box every step.
ConstraintTrainReport train_constraint(ConstraintModel& model, nn::AdamState& optimizer,
                                       std::span<const PointState> demos,
                                       std::span<const PointState> unlabeled,
                                       const ConstraintTrainConfig& cfg, nn::Rng& rng);

// Same, with a fresh optimizer.
ConstraintTrainReport train_constraint(ConstraintModel& model, std::span<const PointState> demos,
                                       std::span<const PointState> unlabeled,
                                       const ConstraintTrainConfig& cfg, nn::Rng& rng);

// Cell-centred lattice over `box`, row-major in y then x.
struct GridPoint {
  double x = 0.0;
  double y = 0.0;
  double zeta = 0.0;
  int c = kFeasible;
};

std::vector<PointState> lattice(const Box& box, std::size_t resolution);
std::vector<GridPoint> evaluate_grid(const ConstraintModel& model, const Box& box,
                                     std::size_t resolution);

inline constexpr const char* kGridHeader = "x,y,zeta,c";

nlohmann::json to_json(const ConstraintModel& model);
ConstraintModel constraint_from_json(const nlohmann::json& doc);

}  // namespace pucl
