#include "pucl/policy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "json_util.hpp"
#include "pucl/errors.hpp"

namespace pucl {

namespace {

constexpr double kPositionScale = 0.1;
const double kLogSqrtTwoPi = 0.5 * std::log(2.0 * std::numbers::pi);

double squared_norm(const nn::MlpGrads& g) {
  double s = 0.0;
  for (const auto& w : g.weights)
    for (double v : w.data()) s += v * v;
  for (const auto& b : g.biases)
    for (double v : b) s += v * v;
  return s;
}

void scale(nn::MlpGrads& g, double factor) {
  for (auto& w : g.weights)
    for (double& v : w.data()) v *= factor;
  for (auto& b : g.biases)
    for (double& v : b) v *= factor;
}

}  // namespace

std::array<double, kFeatureDim> policy_features(const PointState& s) {
  return {s.x * kPositionScale, s.y * kPositionScale, std::cos(s.psi), std::sin(s.psi)};
}

nn::Matrix policy_features(std::span<const PointState> states) {
  nn::Matrix m(states.size(), kFeatureDim);
  for (std::size_t i = 0; i < states.size(); ++i) {
    const auto f = policy_features(states[i]);
    std::copy(f.begin(), f.end(), m.row(i).begin());
  }
  return m;
}

PolicyModel PolicyModel::create(const std::vector<std::size_t>& policy_hidden,
                                const std::vector<std::size_t>& value_hidden,
                                double init_log_std, nn::Rng& rng, double leaky_slope) {
  PolicyModel p;
  std::vector<std::size_t> actor_sizes{kFeatureDim};
  actor_sizes.insert(actor_sizes.end(), policy_hidden.begin(), policy_hidden.end());
  actor_sizes.push_back(kActionDim);
  std::vector<std::size_t> value_sizes{kFeatureDim};
  value_sizes.insert(value_sizes.end(), value_hidden.begin(), value_hidden.end());
  value_sizes.push_back(1);
  p.actor = nn::make_mlp(actor_sizes, nn::Activation::leaky_relu, nn::Activation::tanh, rng,
                         leaky_slope);
  p.value_net = nn::make_mlp(value_sizes, nn::Activation::leaky_relu, nn::Activation::identity,
                             rng, leaky_slope);
  p.log_std.assign(kActionDim, init_log_std);
  p.clamp_log_std();
  p.validate();
  return p;
}

PointAction PolicyModel::mean_action(const PointState& s) const {
  const nn::Matrix out = nn::mlp_predict(actor, policy_features(std::span(&s, 1)));
  return {kActionLimit * out(0, 0), kActionLimit * out(0, 1)};
}

double PolicyModel::value(const PointState& s) const {
  return nn::mlp_predict(value_net, policy_features(std::span(&s, 1)))(0, 0);
}

void PolicyModel::clamp_log_std() {
  for (double& v : log_std) v = std::clamp(v, log_std_min, log_std_max);
}

void PolicyModel::validate() const {
  actor.validate();
  value_net.validate();
  if (actor.input_dim() != kFeatureDim || actor.output_dim() != kActionDim) {
    throw ConfigError("policy actor must map 4 features to 2 action means");
  }
  if (actor.output_activation != nn::Activation::tanh) {
    throw ConfigError("policy actor must have a tanh output");
  }
  if (value_net.input_dim() != kFeatureDim || value_net.output_dim() != 1) {
    throw ConfigError("value network must map 4 features to a scalar");
  }
  if (log_std.size() != kActionDim) throw ConfigError("policy log_std must have 2 entries");
}

void PpoConfig::validate() const {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("ppo.gamma must be in (0, 1]");
  if (!(gae_lambda > 0.0 && gae_lambda <= 1.0)) throw ConfigError("ppo.gae_lambda must be in (0, 1]");
  if (!(clip_epsilon > 0.0)) throw ConfigError("ppo.clip_epsilon must be positive");
  if (!(entropy_coef >= 0.0)) throw ConfigError("ppo.entropy_coef must be non-negative");
  if (!(value_coef >= 0.0)) throw ConfigError("ppo.value_coef must be non-negative");
  if (!(learning_rate > 0.0)) throw ConfigError("ppo.learning_rate must be positive");
  if (!(value_learning_rate > 0.0)) throw ConfigError("ppo.value_learning_rate must be positive");
  if (!(max_grad_norm >= 0.0)) throw ConfigError("ppo.max_grad_norm must be non-negative");
  if (epochs == 0) throw ConfigError("ppo.epochs must be positive");
  if (minibatch_size == 0) throw ConfigError("ppo.minibatch_size must be positive");
  if (forward_iterations == 0) throw ConfigError("ppo.forward_iterations must be positive");
  if (forward_timesteps == 0) throw ConfigError("ppo.forward_timesteps must be positive");
  if (!(penalty_weight >= 0.0)) throw ConfigError("ppo.penalty_weight must be non-negative");
  if (policy_hidden.empty() || value_hidden.empty()) {
    throw ConfigError("ppo.policy_hidden and ppo.value_hidden need at least one layer");
  }
  if (!std::isfinite(init_log_std)) throw ConfigError("ppo.init_log_std must be finite");
  if (!(log_std_min < 1.0) || !std::isfinite(log_std_min) || init_log_std < log_std_min) {
    throw ConfigError("ppo.log_std_min must be finite, below 1 and at most ppo.init_log_std");
  }
}

double penalized_reward(double reward, int c, double penalty_weight) {
  if (c != kFeasible && c != kInfeasible) throw UsageError("constraint indicator must be 0 or 1");
  return reward - penalty_weight * static_cast<double>(c);
}

double gaussian_log_prob(std::span<const double> x, std::span<const double> mean,
                         std::span<const double> log_std) {
  double lp = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double z = (x[k] - mean[k]) / std::exp(log_std[k]);
    lp += -0.5 * z * z - log_std[k] - kLogSqrtTwoPi;
  }
  return lp;
}

ActionSample sample_action(const PolicyModel& policy, const PointState& s, nn::Rng& rng) {
  const PointAction mean = policy.mean_action(s);
  const std::array<double, kActionDim> mu{mean.speed, mean.omega};
  std::normal_distribution<double> normal(0.0, 1.0);
  ActionSample out;
  for (std::size_t k = 0; k < kActionDim; ++k) {
    out.raw[k] = mu[k] + std::exp(policy.log_std[k]) * normal(rng);
  }
  out.log_prob = gaussian_log_prob(out.raw, mu, policy.log_std);
  out.action = clamp_action({out.raw[0], out.raw[1]});
  return out;
}

void RolloutBuffer::clear() { *this = RolloutBuffer{}; }

void RolloutBuffer::check_consistency() const {
  const std::size_t n = states.size();
  const bool ok = raw_actions.size() == n && actions.size() == n && log_probs.size() == n &&
                  values.size() == n && penalized_rewards.size() == n &&
                  raw_rewards.size() == n && constraint_flags.size() == n &&
                  known_flags.size() == n && true_violations.size() == n &&
                  next_states.size() == n && dones.size() == n && terminals.size() == n &&
                  bootstrap_values.size() == n;
  if (!ok) throw UsageError("rollout buffer sequences differ in length");
  if (n == 0) return;
  if (episode_starts.empty() || episode_starts.front() != 0) {
    throw UsageError("rollout buffer episode starts must begin at 0");
  }
  for (std::size_t e = 0; e < episode_starts.size(); ++e) {
    const std::size_t begin = episode_starts[e];
    const std::size_t end = e + 1 < episode_starts.size() ? episode_starts[e + 1] : n;
    if (end <= begin || end > n) throw UsageError("rollout buffer episode starts are not increasing");
    for (std::size_t t = begin; t + 1 < end; ++t) {
      if (dones[t]) throw UsageError("rollout buffer episode ends before the next start");
    }
  }
}

std::vector<Trajectory> RolloutBuffer::complete_episodes() const {
  std::vector<Trajectory> out;
  const std::size_t n = size();
  for (std::size_t e = 0; e < episode_starts.size(); ++e) {
    const std::size_t begin = episode_starts[e];
    const std::size_t end = e + 1 < episode_starts.size() ? episode_starts[e + 1] : n;
    if (end == begin || !dones[end - 1]) continue;
    Trajectory tr;
    tr.start = states[begin];
    for (std::size_t t = begin; t < end; ++t) {
      tr.push({t - begin, next_states[t], actions[t], raw_rewards[t], true_violations[t] != 0});
    }
    out.push_back(std::move(tr));
  }
  return out;
}

RolloutBuffer collect_rollouts(const PolicyModel& policy, const EnvSpec& env,
                               const ConstraintModel& constraint, const PpoConfig& cfg,
                               nn::Rng& rng) {
  const std::size_t capacity = cfg.forward_timesteps;
  RolloutBuffer buf;
  buf.states.reserve(capacity);
  while (buf.size() < capacity) {
    PointState s = env_reset(env, rng);
    buf.episode_starts.push_back(buf.size());
    for (std::size_t step = 0;; ++step) {
      const ActionSample a = sample_action(policy, s, rng);
      const StepOutcome out = env_step(env, s, a.action, step);
      const int c = classify(constraint, out.next_state);
      const int known =
          env.known_region && in_known_region(env, out.next_state.x, out.next_state.y) ? 1 : 0;
      buf.states.push_back(s);
      buf.raw_actions.push_back(a.raw);
      buf.actions.push_back(a.action);
      buf.log_probs.push_back(a.log_prob);
      buf.values.push_back(policy.value(s));
      buf.raw_rewards.push_back(out.reward);
      buf.penalized_rewards.push_back(
          penalized_reward(penalized_reward(out.reward, c, cfg.penalty_weight), known,
                           cfg.penalty_weight));
      buf.constraint_flags.push_back(c);
      buf.known_flags.push_back(known);
      buf.true_violations.push_back(out.true_violation ? 1 : 0);
      buf.next_states.push_back(out.next_state);
      buf.dones.push_back(out.done ? 1 : 0);
      buf.terminals.push_back(out.terminal ? 1 : 0);
      const bool full = buf.size() == capacity;
      const bool ends = out.done || full;
      buf.bootstrap_values.push_back(ends && !out.terminal ? policy.value(out.next_state) : 0.0);
      if (ends) break;
      s = out.next_state;
    }
  }
  return buf;
}

GaeResult compute_gae(const RolloutBuffer& buffer, double gamma, double lambda) {
  const std::size_t n = buffer.size();
  GaeResult out;
  out.advantages.assign(n, 0.0);
  out.returns.assign(n, 0.0);
  std::vector<bool> episode_end(n, false);
  for (std::size_t e = 1; e < buffer.episode_starts.size(); ++e) {
    episode_end[buffer.episode_starts[e] - 1] = true;
  }
  if (n > 0) episode_end[n - 1] = true;
  double next_adv = 0.0;
  for (std::size_t t = n; t-- > 0;) {
    const bool end = episode_end[t] || buffer.dones[t];
    const double next_value = end ? buffer.bootstrap_values[t] : buffer.values[t + 1];
    const double delta = buffer.penalized_rewards[t] + gamma * next_value - buffer.values[t];
    next_adv = delta + (end ? 0.0 : gamma * lambda * next_adv);
    out.advantages[t] = next_adv;
    out.returns[t] = next_adv + buffer.values[t];
  }
  return out;
}

void normalize_advantages(std::vector<double>& advantages) {
  if (advantages.empty()) return;
  const double n = static_cast<double>(advantages.size());
  const double mean = std::accumulate(advantages.begin(), advantages.end(), 0.0) / n;
  double var = 0.0;
  for (double a : advantages) var += (a - mean) * (a - mean);
  const double sd = std::sqrt(var / n);
  for (double& a : advantages) a = sd > 1e-12 ? (a - mean) / sd : 0.0;
}

PpoLoss ppo_loss(const PolicyModel& policy, const PpoBatch& batch, const PpoConfig& cfg) {
  const std::size_t b = batch.states.size();
  if (b == 0) throw UsageError("ppo_loss: empty batch");
  const nn::Matrix feats = policy_features(batch.states);
  const nn::ForwardCache actor_cache = nn::mlp_forward(policy.actor, feats);
  const nn::ForwardCache value_cache = nn::mlp_forward(policy.value_net, feats);
  const nn::Matrix& u = actor_cache.output();
  const nn::Matrix& v = value_cache.output();

  PpoLoss out;
  out.log_std_grads.assign(kActionDim, 0.0);
  std::array<double, kActionDim> sigma{};
  for (std::size_t k = 0; k < kActionDim; ++k) sigma[k] = std::exp(policy.log_std[k]);

  const double inv_b = 1.0 / static_cast<double>(b);
  nn::Matrix actor_grad(b, kActionDim);
  nn::Matrix value_grad(b, 1);
  std::size_t clipped = 0;
  for (std::size_t i = 0; i < b; ++i) {
    std::array<double, kActionDim> z{};
    double log_prob = 0.0;
    for (std::size_t k = 0; k < kActionDim; ++k) {
      const double mu = kActionLimit * u(i, k);
      z[k] = (batch.raw_actions[i][k] - mu) / sigma[k];
      log_prob += -0.5 * z[k] * z[k] - policy.log_std[k] - kLogSqrtTwoPi;
    }
    const double ratio = std::exp(log_prob - batch.old_log_probs[i]);
    const double adv = batch.advantages[i];
    const double unclipped = ratio * adv;
    const double clipped_ratio = std::clamp(ratio, 1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon);
    const double clipped_obj = clipped_ratio * adv;
    if (clipped_ratio != ratio) ++clipped;
    double d_obj_d_logp = 0.0;
    if (unclipped <= clipped_obj) {
      out.surrogate += inv_b * unclipped;
      d_obj_d_logp = ratio * adv;
    } else {
      out.surrogate += inv_b * clipped_obj;
    }
    // policy_loss = -surrogate
    const double g = -inv_b * d_obj_d_logp;
    for (std::size_t k = 0; k < kActionDim; ++k) {
      actor_grad(i, k) = g * (z[k] / sigma[k]) * kActionLimit;
      out.log_std_grads[k] += g * (z[k] * z[k] - 1.0);
    }
    const double err = v(i, 0) - batch.returns[i];
    out.value_loss += inv_b * err * err;
    value_grad(i, 0) = cfg.value_coef * 2.0 * err * inv_b;
  }
  out.policy_loss = -out.surrogate;
  for (std::size_t k = 0; k < kActionDim; ++k) {
    out.entropy += policy.log_std[k] + 0.5 + kLogSqrtTwoPi;
    out.log_std_grads[k] -= cfg.entropy_coef;
  }
  out.clip_fraction = static_cast<double>(clipped) * inv_b;
  out.total = out.policy_loss - cfg.entropy_coef * out.entropy + cfg.value_coef * out.value_loss;
  out.actor_grads = nn::mlp_backward(policy.actor, actor_cache, actor_grad).param_grads;
  out.value_grads = nn::mlp_backward(policy.value_net, value_cache, value_grad).param_grads;
  return out;
}

PpoOptimizer PpoOptimizer::for_policy(const PolicyModel& policy) {
  PpoOptimizer opt;
  opt.actor = nn::AdamState::for_params(policy.actor);
  opt.value = nn::AdamState::for_params(policy.value_net);
  return opt;
}

PpoStats ppo_update(PolicyModel& policy, PpoOptimizer& optimizer, const RolloutBuffer& buffer,
                    const PpoConfig& cfg, nn::Rng& rng, std::size_t iteration) {
  buffer.check_consistency();
  const std::size_t n = buffer.size();
  if (n == 0) throw UsageError("ppo_update: empty rollout buffer");
  const std::string context = "ppo_update iteration " + std::to_string(iteration);

  GaeResult gae = compute_gae(buffer, cfg.gamma, cfg.gae_lambda);
  normalize_advantages(gae.advantages);

  PpoStats stats;
  stats.iteration = iteration;
  {
    const auto episodes = buffer.complete_episodes();
    double raw = 0.0;
    double pen = 0.0;
    for (std::size_t e = 0; e < buffer.episode_starts.size(); ++e) {
      const std::size_t begin = buffer.episode_starts[e];
      const std::size_t end = e + 1 < buffer.episode_starts.size() ? buffer.episode_starts[e + 1] : n;
      if (!buffer.dones[end - 1]) continue;
      for (std::size_t t = begin; t < end; ++t) {
        raw += buffer.raw_rewards[t];
        pen += buffer.penalized_rewards[t];
      }
    }
    if (!episodes.empty()) {
      stats.mean_raw_return = raw / static_cast<double>(episodes.size());
      stats.mean_penalized_return = pen / static_cast<double>(episodes.size());
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::size_t steps = 0;
  PpoBatch batch;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < n; start += cfg.minibatch_size) {
      const std::size_t end = std::min(n, start + cfg.minibatch_size);
      batch.states.clear();
      batch.raw_actions.clear();
      batch.old_log_probs.clear();
      batch.advantages.clear();
      batch.returns.clear();
      for (std::size_t j = start; j < end; ++j) {
        const std::size_t t = order[j];
        batch.states.push_back(buffer.states[t]);
        batch.raw_actions.push_back(buffer.raw_actions[t]);
        batch.old_log_probs.push_back(buffer.log_probs[t]);
        batch.advantages.push_back(gae.advantages[t]);
        batch.returns.push_back(gae.returns[t]);
      }
      PpoLoss loss = ppo_loss(policy, batch, cfg);
      if (!std::isfinite(loss.total)) {
        throw TrainingError(context + ": non-finite loss at epoch " + std::to_string(epoch));
      }
      if (cfg.max_grad_norm > 0.0) {
        double actor_sq = squared_norm(loss.actor_grads);
        for (double g : loss.log_std_grads) actor_sq += g * g;
        const double actor_norm = std::sqrt(actor_sq);
        if (actor_norm > cfg.max_grad_norm) {
          const double f = cfg.max_grad_norm / actor_norm;
          scale(loss.actor_grads, f);
          for (double& g : loss.log_std_grads) g *= f;
        }
        const double value_norm = std::sqrt(squared_norm(loss.value_grads));
        if (value_norm > cfg.max_grad_norm) scale(loss.value_grads, cfg.max_grad_norm / value_norm);
      }
      nn::adam_step(policy.actor, loss.actor_grads, optimizer.actor, cfg.learning_rate, context);
      nn::adam_step(policy.log_std, loss.log_std_grads, optimizer.log_std, cfg.learning_rate, context);
      nn::adam_step(policy.value_net, loss.value_grads, optimizer.value, cfg.value_learning_rate,
                    context);
      policy.clamp_log_std();
      stats.entropy += loss.entropy;
      stats.value_loss += loss.value_loss;
      stats.policy_loss += loss.policy_loss;
      ++steps;
    }
  }
  const double inv = 1.0 / static_cast<double>(steps);
  stats.entropy *= inv;
  stats.value_loss *= inv;
  stats.policy_loss *= inv;
  return stats;
}

nlohmann::json to_json(const PolicyModel& policy) {
  return {{"format", "pucl-policy"},
          {"version", 1},
          {"actor", nn::to_json(policy.actor)},
          {"log_std", policy.log_std},
          {"log_std_bounds", {policy.log_std_min, policy.log_std_max}},
          {"value_net", nn::to_json(policy.value_net)}};
}

PolicyModel policy_from_json(const nlohmann::json& doc) {
  using detail::require;
  if (require<std::string>(doc, "format", "") != "pucl-policy") throw ConfigError("not a policy snapshot");
  if (require<int>(doc, "version", "") != 1) throw ConfigError("unsupported policy snapshot version");
  PolicyModel p;
  p.actor = nn::mlp_from_json(detail::require_object(doc, "actor", ""));
  p.value_net = nn::mlp_from_json(detail::require_object(doc, "value_net", ""));
  p.log_std = require<std::vector<double>>(doc, "log_std", "");
  const auto bounds = require<std::vector<double>>(doc, "log_std_bounds", "");
  if (bounds.size() != 2) throw ConfigError("policy log_std_bounds must have 2 entries");
  p.log_std_min = bounds[0];
  p.log_std_max = bounds[1];
  p.validate();
  return p;
}

}  // namespace pucl
