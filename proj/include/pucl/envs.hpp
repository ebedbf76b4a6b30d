#pragma once

// Point-robot environments: unicycle kinematics on the plane with a unit time
// step, the two task rewards, and ground-truth constraint predicates that are
// only ever used for demonstration checks and metrics.

#include <cstddef>
#include <iosfwd>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace pucl {

using Rng = std::mt19937_64;

inline constexpr double kActionLimit = 0.25;

struct PointState {
  double x = 0.0;
  double y = 0.0;
  double psi = 0.0;

  friend bool operator==(const PointState&, const PointState&) = default;
};

struct PointAction {
  double speed = 0.0;
  double omega = 0.0;

  friend bool operator==(const PointAction&, const PointAction&) = default;
};

// Maps an angle into (-pi, pi].
double wrap_angle(double angle);

PointAction clamp_action(PointAction a);

enum class EnvKind { circle, obstacle };

std::string to_string(EnvKind kind);
EnvKind env_kind_from_string(const std::string& name);

struct Box {
  double x_min = -12.0;
  double x_max = 12.0;
  double y_min = -12.0;
  double y_max = 12.0;

  bool contains(double x, double y) const {
    return x >= x_min && x <= x_max && y >= y_min && y <= y_max;
  }
  friend bool operator==(const Box&, const Box&) = default;
};

struct EnvSpec {
  EnvKind kind = EnvKind::circle;
  std::size_t episode_length = 150;

  // point-circle
  double circle_radius = 10.0;
  double circle_wall = 6.0;

  // point-obstacle
  double obstacle_x_min = -2.0;
  double obstacle_x_max = 5.0;
  double obstacle_y_min = -2.0;
  double obstacle_y_max = 2.0;
  double known_wall_x = -2.0;
  double goal_x = 0.0;
  double goal_y = 10.0;
  double goal_radius = 0.3;
  double goal_bonus = 0.1;
  double norm_factor = 20.0;

  // Penalize the known wall during policy learning in addition to the learned constraint.
  bool known_region = true;

  // State-space region used for regularizer sampling, IoU lattices and grid export.
  Box box{};

  static EnvSpec point_circle();
  static EnvSpec point_obstacle();

  // Throws ConfigError naming the offending field.
  void validate() const;

  friend bool operator==(const EnvSpec&, const EnvSpec&) = default;
};

nlohmann::json to_json(const EnvSpec& spec);
// Every field is required; throws ConfigError naming the first missing one.
EnvSpec env_from_json(const nlohmann::json& doc, const std::string& path = "env");

struct StepOutcome {
  PointState next_state;
  double reward = 0.0;
  bool done = false;
  // True when `done` came from reaching the goal rather than the time limit.
  bool terminal = false;
  bool true_violation = false;
};

PointState env_reset(const EnvSpec& spec, Rng& rng);

// `a` must already be clamped. `step_index` is the 0-based index of this step
// within the episode and drives the time limit.
StepOutcome env_step(const EnvSpec& spec, const PointState& s, const PointAction& a,
                     std::size_t step_index);

double reward_circle(const PointState& s, const PointAction& a, double radius = 10.0);
double reward_obstacle(const PointState& s, const EnvSpec& spec = EnvSpec::point_obstacle());

bool goal_reached(const EnvSpec& spec, const PointState& s);

enum class Feasibility { feasible, infeasible };

Feasibility true_constraint(const EnvSpec& spec, const PointState& s);

inline bool truly_infeasible(const EnvSpec& spec, const PointState& s) {
  return true_constraint(spec, s) == Feasibility::infeasible;
}

// The always-known part of the infeasible set (obstacle: x <= known wall); false for circle.
bool in_known_region(const EnvSpec& spec, double x, double y);

// Trajectory dump record; x, y, psi are the state reached by applying
// (speed, omega) at step t, and reward/true_violation refer to that state.
struct StepRecord {
  std::size_t t = 0;
  PointState state;
  PointAction action;
  double reward = 0.0;
  bool true_violation = false;

  friend bool operator==(const StepRecord&, const StepRecord&) = default;
};

inline constexpr const char* kTrajectoryHeader = "t,x,y,psi,speed,omega,reward,true_violation";

// Reals with 17 significant digits, comma separated, no trailing newline.
std::string format_step_record(const StepRecord& r);
StepRecord parse_step_record(const std::string& line, std::size_t line_number);

// One episode. `return_value` is the undiscounted sum of step rewards.
struct Trajectory {
  PointState start;
  std::vector<StepRecord> steps;
  double return_value = 0.0;

  void push(const StepRecord& r) {
    steps.push_back(r);
    return_value += r.reward;
  }
  double recomputed_return() const;
};

}  // namespace pucl
