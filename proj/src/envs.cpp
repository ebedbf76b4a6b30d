#include "pucl/envs.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <sstream>
#include <vector>

#include <nlohmann/json.hpp>

#include "json_util.hpp"
#include "pucl/errors.hpp"

namespace pucl {

double wrap_angle(double angle) {
  if (angle > -std::numbers::pi && angle <= std::numbers::pi) return angle;
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double wrapped = std::fmod(angle + std::numbers::pi, two_pi);
  if (wrapped < 0.0) wrapped += two_pi;
  wrapped -= std::numbers::pi;
  // fmod lands on -pi for odd multiples of pi; the interval is (-pi, pi].
  if (wrapped <= -std::numbers::pi) wrapped = std::numbers::pi;
  return wrapped;
}

PointAction clamp_action(PointAction a) {
  return {std::clamp(a.speed, -kActionLimit, kActionLimit),
          std::clamp(a.omega, -kActionLimit, kActionLimit)};
}

std::string to_string(EnvKind kind) { return kind == EnvKind::circle ? "circle" : "obstacle"; }

EnvKind env_kind_from_string(const std::string& name) {
  if (name == "circle") return EnvKind::circle;
  if (name == "obstacle") return EnvKind::obstacle;
  throw ConfigError("env.kind: unknown environment '" + name + "'");
}

EnvSpec EnvSpec::point_circle() {
  EnvSpec s;
  s.kind = EnvKind::circle;
  s.episode_length = 150;
  s.known_region = false;
  return s;
}

EnvSpec EnvSpec::point_obstacle() {
  EnvSpec s;
  s.kind = EnvKind::obstacle;
  s.episode_length = 175;
  s.known_region = true;
  return s;
}

void EnvSpec::validate() const {
  auto positive = [](double v, const char* field) {
    if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(std::string(field) + " must be positive");
  };
  if (episode_length == 0) throw ConfigError("env.episode_length must be positive");
  if (!(box.x_max > box.x_min) || !(box.y_max > box.y_min)) {
    throw ConfigError("env.box must have positive extent");
  }
  if (kind == EnvKind::circle) {
    positive(circle_radius, "env.circle_radius");
    positive(circle_wall, "env.circle_wall");
    if (!box.contains(circle_wall, 0.0) || !box.contains(-circle_wall, 0.0)) {
      throw ConfigError("env.box must contain the circle walls");
    }
  } else {
    positive(goal_radius, "env.goal_radius");
    positive(norm_factor, "env.norm_factor");
    if (!(obstacle_x_max > obstacle_x_min) || !(obstacle_y_max > obstacle_y_min)) {
      throw ConfigError("env.obstacle must have positive extent");
    }
    if (!box.contains(obstacle_x_min, obstacle_y_min) ||
        !box.contains(obstacle_x_max, obstacle_y_max) || !box.contains(goal_x, goal_y) ||
        !box.contains(known_wall_x, 0.0)) {
      throw ConfigError("env.box must contain the obstacle, the known wall and the goal");
    }
  }
}

PointState env_reset(const EnvSpec& spec, Rng& rng) {
  std::uniform_real_distribution<double> heading(-std::numbers::pi, std::numbers::pi);
  PointState s;
  if (spec.kind == EnvKind::obstacle) {
    std::uniform_real_distribution<double> ux(-0.5, 0.5);
    std::uniform_real_distribution<double> uy(-8.5, -7.5);
    s.x = ux(rng);
    s.y = uy(rng);
  } else {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    s.x = u(rng);
    s.y = u(rng);
  }
  s.psi = wrap_angle(heading(rng));
  return s;
}

double reward_circle(const PointState& s, const PointAction& a, double radius) {
  constexpr double min_norm = 1e-6;
  const double dx = a.speed * std::cos(s.psi);
  const double dy = a.speed * std::sin(s.psi);
  const double norm = std::max(std::hypot(s.x, s.y), min_norm);
  return (s.y * dx - s.x * dy) / (1.0 + std::abs(norm - radius)) / norm;
}

double reward_obstacle(const PointState& s, const EnvSpec& spec) {
  const double dist = std::hypot(s.x - spec.goal_x, s.y - spec.goal_y);
  double r = -dist / spec.norm_factor;
  if (dist < spec.goal_radius) r += spec.goal_bonus;
  return r;
}

bool goal_reached(const EnvSpec& spec, const PointState& s) {
  return std::hypot(s.x - spec.goal_x, s.y - spec.goal_y) < spec.goal_radius;
}

StepOutcome env_step(const EnvSpec& spec, const PointState& s, const PointAction& a,
                     std::size_t step_index) {
  StepOutcome out;
  out.next_state.x = s.x + a.speed * std::cos(s.psi);
  out.next_state.y = s.y + a.speed * std::sin(s.psi);
  out.next_state.psi = wrap_angle(s.psi + a.omega);
  if (spec.kind == EnvKind::circle) {
    // Position after the move, displacement direction from the heading it was taken with.
    const PointState reached{out.next_state.x, out.next_state.y, s.psi};
    out.reward = reward_circle(reached, a, spec.circle_radius);
  } else {
    out.reward = reward_obstacle(out.next_state, spec);
    out.terminal = goal_reached(spec, out.next_state);
  }
  out.done = out.terminal || step_index + 1 >= spec.episode_length;
  out.true_violation = truly_infeasible(spec, out.next_state);
  return out;
}

bool in_known_region(const EnvSpec& spec, double x, double /*y*/) {
  return spec.kind == EnvKind::obstacle && x <= spec.known_wall_x;
}

Feasibility true_constraint(const EnvSpec& spec, const PointState& s) {
  bool infeasible = false;
  if (spec.kind == EnvKind::circle) {
    infeasible = std::abs(s.x) > spec.circle_wall;
  } else {
    const bool in_rect = s.x >= spec.obstacle_x_min && s.x <= spec.obstacle_x_max &&
                         s.y >= spec.obstacle_y_min && s.y <= spec.obstacle_y_max;
    infeasible = in_rect || s.x <= spec.known_wall_x;
  }
  return infeasible ? Feasibility::infeasible : Feasibility::feasible;
}

std::string format_step_record(const StepRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%d", r.t, r.state.x,
                r.state.y, r.state.psi, r.action.speed, r.action.omega, r.reward,
                r.true_violation ? 1 : 0);
  return buf;
}

namespace {

double parse_real(const std::string& field, std::size_t line_number) {
  char* end = nullptr;
  const double v = std::strtod(field.c_str(), &end);
  if (field.empty() || end != field.c_str() + field.size()) {
    throw ParseError("expected a real number, got '" + field + "'", line_number);
  }
  return v;
}

}  // namespace

StepRecord parse_step_record(const std::string& line, std::size_t line_number) {
  std::vector<std::string> fields;
  std::stringstream ss(line);
  std::string item;
  while (std::getline(ss, item, ',')) fields.push_back(item);
  if (fields.size() != 8) {
    throw ParseError("trajectory record needs 8 fields, got " + std::to_string(fields.size()),
                     line_number);
  }
  StepRecord r;
  const double t = parse_real(fields[0], line_number);
  if (t < 0.0 || t != std::floor(t)) throw ParseError("t must be a non-negative integer", line_number);
  r.t = static_cast<std::size_t>(t);
  r.state = {parse_real(fields[1], line_number), parse_real(fields[2], line_number),
             parse_real(fields[3], line_number)};
  r.action = {parse_real(fields[4], line_number), parse_real(fields[5], line_number)};
  r.reward = parse_real(fields[6], line_number);
  if (fields[7] != "0" && fields[7] != "1") throw ParseError("true_violation must be 0 or 1", line_number);
  r.true_violation = fields[7] == "1";
  return r;
}

double Trajectory::recomputed_return() const {
  double total = 0.0;
  for (const auto& r : steps) total += r.reward;
  return total;
}

nlohmann::json to_json(const EnvSpec& spec) {
  return {{"kind", to_string(spec.kind)},
          {"episode_length", spec.episode_length},
          {"circle_radius", spec.circle_radius},
          {"circle_wall", spec.circle_wall},
          {"obstacle", {spec.obstacle_x_min, spec.obstacle_x_max, spec.obstacle_y_min,
                        spec.obstacle_y_max}},
          {"known_wall_x", spec.known_wall_x},
          {"goal", {spec.goal_x, spec.goal_y}},
          {"goal_radius", spec.goal_radius},
          {"goal_bonus", spec.goal_bonus},
          {"norm_factor", spec.norm_factor},
          {"known_region", spec.known_region},
          {"box", {spec.box.x_min, spec.box.x_max, spec.box.y_min, spec.box.y_max}}};
}

EnvSpec env_from_json(const nlohmann::json& doc, const std::string& path) {
  using detail::require;
  EnvSpec s;
  s.kind = env_kind_from_string(require<std::string>(doc, "kind", path));
  s.episode_length = require<std::size_t>(doc, "episode_length", path);
  s.circle_radius = require<double>(doc, "circle_radius", path);
  s.circle_wall = require<double>(doc, "circle_wall", path);
  const auto rect = require<std::vector<double>>(doc, "obstacle", path);
  if (rect.size() != 4) throw ConfigError(path + ".obstacle must be [x_min, x_max, y_min, y_max]");
  s.obstacle_x_min = rect[0];
  s.obstacle_x_max = rect[1];
  s.obstacle_y_min = rect[2];
  s.obstacle_y_max = rect[3];
  s.known_wall_x = require<double>(doc, "known_wall_x", path);
  const auto goal = require<std::vector<double>>(doc, "goal", path);
  if (goal.size() != 2) throw ConfigError(path + ".goal must be [x, y]");
  s.goal_x = goal[0];
  s.goal_y = goal[1];
  s.goal_radius = require<double>(doc, "goal_radius", path);
  s.goal_bonus = require<double>(doc, "goal_bonus", path);
  s.norm_factor = require<double>(doc, "norm_factor", path);
  s.known_region = require<bool>(doc, "known_region", path);
  const auto box = require<std::vector<double>>(doc, "box", path);
  if (box.size() != 4) throw ConfigError(path + ".box must be [x_min, x_max, y_min, y_max]");
  s.box = {box[0], box[1], box[2], box[3]};
  s.validate();
  return s;
}

}  // namespace pucl
