#include "pucl/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <numbers>
#include <set>
#include <utility>

#include "pucl/errors.hpp"

namespace pucl {

void DemoSet::recompute_stats() {
  if (trajectories.empty()) {
    return_mean = 0.0;
    return_std = 0.0;
    return;
  }
  const double n = static_cast<double>(trajectories.size());
  double sum = 0.0;
  for (const auto& t : trajectories) sum += t.return_value;
  return_mean = sum / n;
  double var = 0.0;
  for (const auto& t : trajectories) var += (t.return_value - return_mean) * (t.return_value - return_mean);
  return_std = std::sqrt(var / n);
}

std::vector<PointState> DemoSet::states() const {
  std::vector<PointState> out;
  for (const auto& t : trajectories)
    for (const auto& r : t.steps) out.push_back(r.state);
  return out;
}

std::vector<PointState> MemoryBuffer::states() const {
  std::vector<PointState> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(e.state);
  return out;
}

void ExpertConfig::validate() const {
  if (trajectories == 0) throw ConfigError("expert.trajectories must be positive");
  if (max_updates == 0 || min_updates > max_updates) {
    throw ConfigError("expert.max_updates must be positive and >= expert.min_updates");
  }
  if (plateau_window == 0) throw ConfigError("expert.plateau_window must be positive");
  if (!(penalty_weight >= 0.0)) throw ConfigError("expert.penalty_weight must be non-negative");
  if (!(entropy_coef >= 0.0)) throw ConfigError("expert.entropy_coef must be non-negative");
  if (max_attempts < trajectories) throw ConfigError("expert.max_attempts must be >= expert.trajectories");
}

double ConstraintModelConfig::threshold() const {
  return decision_threshold ? *decision_threshold : threshold_from_f(label_frequency);
}

void ConstraintModelConfig::validate() const {
  threshold_from_f(label_frequency);
  const double d = threshold();
  if (!(d > 0.0 && d < 1.0)) throw ConfigError("constraint.decision_threshold must be in (0, 1)");
  if (!(input_scale > 0.0)) throw ConfigError("constraint.input_scale must be positive");
}

RunConfig RunConfig::point_circle() {
  RunConfig c;
  c.env = EnvSpec::point_circle();
  c.ppo.penalty_weight = 0.5;
  c.ppo.forward_iterations = 5;
  c.constraint.hidden_sizes = {16, 16};
  c.constraint.learning_rate = 0.03;
  c.constraint.backward_iterations = 20;
  c.constraint.regularization_weight = 0.05;
  c.constraint.regularizer_box = c.env.box;
  c.constraint.reset_optimizer = true;
  c.constraint_model.input_scale = 0.3;
  c.constraint_model.label_frequency = 0.4;
  c.constraint_model.decision_threshold = 0.2;
  c.expert.penalty_weight = 0.5;
  c.expert.symmetrize = true;
  c.iterations = 25;
  return c;
}

RunConfig RunConfig::point_obstacle() {
  RunConfig c;
  c.env = EnvSpec::point_obstacle();
  c.ppo.penalty_weight = 0.7;
  c.ppo.forward_iterations = 6;
  c.constraint.hidden_sizes = {16, 16};
  c.constraint.learning_rate = 0.03;
  c.constraint.backward_iterations = 20;
  c.constraint.regularization_weight = 0.25;
  c.constraint.regularizer_box = c.env.box;
  c.constraint.reset_optimizer = true;
  c.constraint_model.input_scale = 0.3;
  c.constraint_model.label_frequency = 0.1;
  c.constraint_model.decision_threshold = 0.05;
  c.expert.penalty_weight = 0.7;
  c.iterations = 50;
  return c;
}

void RunConfig::validate() const {
  env.validate();
  ppo.validate();
  constraint.validate();
  constraint_model.validate();
  expert.validate();
  if (expert.symmetrize && env.kind != EnvKind::circle) {
    throw ConfigError("expert.symmetrize requires the point-circle environment");
  }
  if (iterations == 0) throw ConfigError("run.iterations must be positive");
  if (!(filter_alpha >= 0.0)) throw ConfigError("run.filter_alpha must be non-negative");
  if (memory_fraction < 1) throw ConfigError("run.memory_fraction must be >= 1");
  if (eval_episodes == 0) throw ConfigError("run.eval_episodes must be positive");
  if (iou_resolution == 0) throw ConfigError("run.iou_resolution must be positive");
}

nn::Rng derived_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                    0x5eedu};
  return nn::Rng(seq);
}

namespace {

PpoConfig expert_ppo(const RunConfig& cfg) {
  PpoConfig p = cfg.ppo;
  p.penalty_weight = cfg.expert.penalty_weight;
  p.entropy_coef = cfg.expert.entropy_coef;
  return p;
}

Trajectory rollout_episode(const ActionFn& act, const EnvSpec& spec, nn::Rng& rng) {
  Trajectory tr;
  PointState s = env_reset(spec, rng);
  tr.start = s;
  for (std::size_t t = 0;; ++t) {
    const PointAction a = clamp_action(act(s, rng));
    const StepOutcome out = env_step(spec, s, a, t);
    tr.push({t, out.next_state, a, out.reward, out.true_violation});
    if (out.done) break;
    s = out.next_state;
  }
  return tr;
}

ActionFn stochastic(const PolicyModel& policy) {
  return [&policy](const PointState& s, nn::Rng& rng) { return sample_action(policy, s, rng).action; };
}

ActionFn reflected(const PolicyModel& policy) {
  return [&policy](const PointState& s, nn::Rng& rng) {
    const PointState r{-s.x, -s.y, wrap_angle(s.psi + std::numbers::pi)};
    return sample_action(policy, r, rng).action;
  };
}

}  // namespace

ExpertResult generate_expert(const RunConfig& cfg, nn::Rng& rng) {
  cfg.validate();
  const PpoConfig ppo = expert_ppo(cfg);
  const ConstraintModel truth = ConstraintModel::make_oracle(cfg.env);
  ExpertResult result{{},
                      PolicyModel::create(ppo.policy_hidden, ppo.value_hidden, ppo.init_log_std,
                                          rng, cfg.leaky_slope),
                      {},
                      0};
  result.expert.log_std_min = ppo.log_std_min;
  PpoOptimizer opt = PpoOptimizer::for_policy(result.expert);
  const std::size_t w = cfg.expert.plateau_window;
  for (std::size_t u = 0; u < cfg.expert.max_updates; ++u) {
    const RolloutBuffer buf = collect_rollouts(result.expert, cfg.env, truth, ppo, rng);
    result.training.push_back(ppo_update(result.expert, opt, buf, ppo, rng, u));
    const std::size_t done = result.training.size();
    if (done >= cfg.expert.min_updates && done >= 2 * w) {
      double recent = 0.0;
      double before = 0.0;
      for (std::size_t k = 0; k < w; ++k) {
        recent += result.training[done - 1 - k].mean_penalized_return;
        before += result.training[done - 1 - w - k].mean_penalized_return;
      }
      recent /= static_cast<double>(w);
      before /= static_cast<double>(w);
      if (recent - before < cfg.expert.plateau_tolerance) break;
    }
  }

  const ActionFn act = stochastic(result.expert);
  const ActionFn mirror = reflected(result.expert);
  std::size_t attempts = 0;
  while (result.demos.trajectories.size() < cfg.expert.trajectories) {
    if (attempts++ >= cfg.expert.max_attempts) {
      throw TrainingError("generate_expert: only " +
                          std::to_string(result.demos.trajectories.size()) + " of " +
                          std::to_string(cfg.expert.trajectories) +
                          " violation-free trajectories within " +
                          std::to_string(cfg.expert.max_attempts) + " attempts");
    }
    const bool odd = result.demos.trajectories.size() % 2 == 1;
    Trajectory tr = rollout_episode(cfg.expert.symmetrize && odd ? mirror : act, cfg.env, rng);
    const bool violates = std::any_of(tr.steps.begin(), tr.steps.end(),
                                      [](const StepRecord& r) { return r.true_violation; });
    if (violates) {
      ++result.rejected;
      continue;
    }
    result.demos.trajectories.push_back(std::move(tr));
  }
  result.demos.recompute_stats();
  return result;
}

std::vector<Trajectory> filter_trajectories(std::span<const Trajectory> trajs,
                                            const DemoSet& demos, double alpha) {
  const double threshold = demos.return_mean - alpha * demos.return_std;
  std::vector<Trajectory> kept;
  for (const auto& t : trajs) {
    if (t.return_value >= threshold) kept.push_back(t);
  }
  return kept;
}

std::size_t update_memory(const ConstraintModel& model, std::span<const Trajectory> trajs,
                          MemoryBuffer& buffer, std::size_t memory_fraction,
                          std::size_t iteration) {
  if (memory_fraction < 1) throw UsageError("update_memory: memory_fraction must be >= 1");
  std::vector<PointState> states;
  for (const auto& t : trajs)
    for (const auto& r : t.steps) states.push_back(r.state);
  const auto zeta = model.zeta(states);
  std::vector<std::pair<double, std::size_t>> infeasible;
  for (std::size_t i = 0; i < states.size(); ++i) {
    if (classify_zeta(zeta[i], model.decision_threshold) == kInfeasible) {
      infeasible.emplace_back(zeta[i], i);
    }
  }
  std::stable_sort(infeasible.begin(), infeasible.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  const std::size_t keep = infeasible.size() / memory_fraction;

  std::set<std::pair<double, double>> present;
  for (const auto& e : buffer.entries) present.emplace(e.state.x, e.state.y);
  std::size_t appended = 0;
  for (std::size_t k = 0; k < keep; ++k) {
    const auto& s = states[infeasible[k].second];
    if (!present.emplace(s.x, s.y).second) continue;
    buffer.entries.push_back({s, infeasible[k].first, iteration});
    ++appended;
  }
  return appended;
}

double iou(const std::vector<bool>& predicted, const std::vector<bool>& truth) {
  if (predicted.size() != truth.size()) throw UsageError("iou: mask sizes differ");
  std::size_t inter = 0;
  std::size_t uni = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    inter += predicted[i] && truth[i];
    uni += predicted[i] || truth[i];
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double metric_iou(const ConstraintModel& model, const EnvSpec& spec, std::size_t resolution,
                  bool include_known) {
  const auto pts = lattice(spec.box, resolution);
  const auto zeta = model.zeta(pts);
  std::vector<bool> predicted;
  std::vector<bool> truth;
  predicted.reserve(pts.size());
  truth.reserve(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const bool known = spec.known_region && in_known_region(spec, pts[i].x, pts[i].y);
    if (known && !include_known) continue;
    predicted.push_back(classify_zeta(zeta[i], model.decision_threshold) == kInfeasible || known);
    truth.push_back(truly_infeasible(spec, pts[i]));
  }
  return iou(predicted, truth);
}

ViolationReport metric_violation(const ActionFn& act, const EnvSpec& spec, std::size_t episodes,
                                 nn::Rng& rng) {
  if (episodes == 0) throw UsageError("metric_violation: episodes must be >= 1");
  ViolationReport rep;
  std::size_t violations = 0;
  double total_return = 0.0;
  for (std::size_t e = 0; e < episodes; ++e) {
    const Trajectory tr = rollout_episode(act, spec, rng);
    for (const auto& r : tr.steps) violations += r.true_violation ? 1 : 0;
    rep.steps += tr.steps.size();
    total_return += tr.return_value;
  }
  rep.violation_rate = static_cast<double>(violations) / static_cast<double>(rep.steps);
  rep.mean_return = total_return / static_cast<double>(episodes);
  return rep;
}

ViolationReport metric_violation(const PolicyModel& policy, const EnvSpec& spec,
                                 std::size_t episodes, nn::Rng& rng) {
  return metric_violation(stochastic(policy), spec, episodes, rng);
}

std::string format_metrics_row(const IterationReport& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%zu,%zu,%.17g,%.17g,%.17g,%zu,%zu,%.17g,%.17g", r.iteration,
                r.timesteps_cumulative, r.iou, r.violation_rate, r.mean_return,
                r.n_filtered_trajectories, r.memory_size, r.f, r.d);
  return buf;
}

IcrlResult run_icrl(const RunConfig& cfg, const DemoSet& demos, std::uint64_t seed,
                    const IcrlHooks& hooks, const IcrlOptions& options) {
  cfg.validate();
  if (demos.trajectories.empty()) throw UsageError("run_icrl: empty demonstration set");
  nn::Rng rng = derived_rng(seed, 0);
  const auto& mc = cfg.constraint_model;

  IcrlResult res{options.initial_constraint
                     ? *options.initial_constraint
                     : ConstraintModel::create(cfg.constraint.hidden_sizes, mc.label_frequency,
                                               mc.threshold(), rng, mc.input, mc.input_scale,
                                               cfg.leaky_slope),
                 PolicyModel::create(cfg.ppo.policy_hidden, cfg.ppo.value_hidden,
                                     cfg.ppo.init_log_std, rng, cfg.leaky_slope),
                 {},
                 {}};
  res.policy.log_std_min = cfg.ppo.log_std_min;
  PpoOptimizer policy_opt = PpoOptimizer::for_policy(res.policy);
  std::optional<nn::AdamState> constraint_opt;
  if (!res.constraint.oracle) constraint_opt = nn::AdamState::for_params(res.constraint.net);

  const std::vector<PointState> demo_states = demos.states();
  std::set<std::pair<double, double>> demo_points;
  for (const auto& s : demo_states) demo_points.emplace(s.x, s.y);
  const double filter_threshold = demos.return_mean - cfg.filter_alpha * demos.return_std;

  for (std::size_t it = 1; it <= cfg.iterations; ++it) {
    const std::string context = "run_icrl iteration " + std::to_string(it);
    RolloutBuffer batch;
    for (std::size_t k = 0; k < cfg.ppo.forward_iterations; ++k) {
      batch = collect_rollouts(res.policy, cfg.env, res.constraint, cfg.ppo, rng);
      const PpoStats stats = ppo_update(res.policy, policy_opt, batch, cfg.ppo, rng, it);
      if (hooks.on_ppo_update) hooks.on_ppo_update(stats);
    }

    const std::vector<Trajectory> sampled = batch.complete_episodes();
    const std::vector<Trajectory> passed =
        cfg.filter_enabled ? filter_trajectories(sampled, demos, cfg.filter_alpha) : sampled;

    IterationReport rep;
    rep.iteration = it;
    rep.timesteps_cumulative = it * cfg.ppo.forward_iterations * cfg.ppo.forward_timesteps;
    rep.n_sampled_trajectories = sampled.size();
    rep.n_filtered_trajectories = passed.size();
    rep.filter_threshold = filter_threshold;
    for (const auto& t : passed) {
      if (cfg.filter_enabled && !(t.return_value >= filter_threshold)) {
        throw std::logic_error(context + ": trajectory below the filter threshold reached the learner");
      }
      rep.min_filtered_return =
          rep.min_filtered_return ? std::min(*rep.min_filtered_return, t.return_value)
                                  : t.return_value;
    }
    if (!sampled.empty()) {
      double sum = 0.0;
      for (const auto& t : sampled) sum += t.return_value;
      rep.mean_return = sum / static_cast<double>(sampled.size());
    }

    if (!passed.empty() && !options.freeze_constraint && constraint_opt) {
      std::vector<PointState> negatives;
      for (const auto& t : passed)
        for (const auto& r : t.steps) {
          if (!demo_points.contains({r.state.x, r.state.y})) negatives.push_back(r.state);
        }
      if (cfg.cmr_enabled) {
        for (const auto& e : res.memory.entries) {
          if (!demo_points.contains({e.state.x, e.state.y})) negatives.push_back(e.state);
        }
      }
      if (!negatives.empty()) {
        if (cfg.constraint.reset_optimizer) *constraint_opt = nn::AdamState::for_params(res.constraint.net);
        train_constraint(res.constraint, *constraint_opt, demo_states, negatives,
                         cfg.constraint, rng);
        rep.constraint_updated = true;
        if (mc.estimate_label_frequency) {
          res.constraint.label_frequency = estimate_label_frequency(res.constraint, demo_states);
          res.constraint.decision_threshold = threshold_from_f(res.constraint.label_frequency);
        }
        if (cfg.cmr_enabled) update_memory(res.constraint, passed, res.memory, cfg.memory_fraction, it);
      }
    }

    rep.memory_size = res.memory.size();
    rep.f = res.constraint.label_frequency;
    rep.d = res.constraint.decision_threshold;
    rep.iou = metric_iou(res.constraint, cfg.env, cfg.iou_resolution, cfg.iou_include_known);
    nn::Rng eval_rng = derived_rng(seed, it);
    rep.violation_rate = metric_violation(res.policy, cfg.env, cfg.eval_episodes, eval_rng).violation_rate;
    for (double v : {rep.iou, rep.violation_rate, rep.mean_return}) {
      if (!std::isfinite(v)) throw TrainingError(context + ": non-finite metric");
    }
    res.reports.push_back(rep);
    if (hooks.on_iteration) hooks.on_iteration(rep, res.constraint, res.policy, res.memory);
  }
  return res;
}

}  // namespace pucl
