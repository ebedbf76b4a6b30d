#include "pucl/constraint.hpp"

#include <algorithm>
#include <cmath>

#include "json_util.hpp"
#include "pucl/errors.hpp"

namespace pucl {

std::string to_string(ConstraintInput in) {
  return in == ConstraintInput::position ? "position" : "full_state";
}

ConstraintInput constraint_input_from_string(const std::string& name) {
  if (name == "position") return ConstraintInput::position;
  if (name == "full_state") return ConstraintInput::full_state;
  throw ConfigError("unknown constraint input '" + name + "'");
}

std::string to_string(LossWeighting w) {
  return w == LossWeighting::per_set_mean ? "per_set_mean" : "pooled";
}

LossWeighting loss_weighting_from_string(const std::string& name) {
  if (name == "per_set_mean") return LossWeighting::per_set_mean;
  if (name == "pooled") return LossWeighting::pooled;
  throw ConfigError("unknown loss weighting '" + name + "'");
}

nn::Matrix ConstraintModel::features(std::span<const PointState> states) const {
  nn::Matrix m(states.size(), input_dim());
  for (std::size_t i = 0; i < states.size(); ++i) {
    m(i, 0) = states[i].x * input_scale;
    m(i, 1) = states[i].y * input_scale;
    if (input == ConstraintInput::full_state) m(i, 2) = states[i].psi / std::numbers::pi;
  }
  return m;
}

double ConstraintModel::zeta(const PointState& s) const {
  return zeta(std::span<const PointState>(&s, 1)).front();
}

std::vector<double> ConstraintModel::zeta(std::span<const PointState> states) const {
  std::vector<double> out(states.size());
  if (oracle) {
    for (std::size_t i = 0; i < states.size(); ++i) {
      out[i] = truly_infeasible(*oracle, states[i]) ? kZetaFloor : kZetaCeil;
    }
    return out;
  }
  if (states.empty()) return out;
  const nn::Matrix y = nn::mlp_predict(net, features(states));
  for (std::size_t i = 0; i < states.size(); ++i) out[i] = y(i, 0);
  return out;
}

ConstraintModel ConstraintModel::create(const std::vector<std::size_t>& hidden_sizes,
                                        double label_frequency, double decision_threshold,
                                        nn::Rng& rng, ConstraintInput input, double input_scale,
                                        double leaky_slope) {
  ConstraintModel m;
  m.input = input;
  m.input_scale = input_scale;
  m.label_frequency = label_frequency;
  m.decision_threshold = decision_threshold;
  std::vector<std::size_t> sizes{m.input_dim()};
  sizes.insert(sizes.end(), hidden_sizes.begin(), hidden_sizes.end());
  sizes.push_back(1);
  m.net = nn::make_mlp(sizes, nn::Activation::leaky_relu, nn::Activation::sigmoid, rng,
                       leaky_slope);
  m.validate();
  return m;
}

ConstraintModel ConstraintModel::make_oracle(const EnvSpec& spec, double decision_threshold) {
  ConstraintModel m;
  m.oracle = spec;
  m.decision_threshold = decision_threshold;
  m.label_frequency = std::min(1.0, 2.0 * decision_threshold);
  m.validate();
  return m;
}

void ConstraintModel::validate() const {
  if (!(label_frequency > 0.0 && label_frequency <= 1.0)) {
    throw ConfigError("constraint.label_frequency must be in (0, 1]");
  }
  if (!(decision_threshold > 0.0 && decision_threshold < 1.0)) {
    throw ConfigError("constraint.decision_threshold must be in (0, 1)");
  }
  if (oracle) return;
  if (!(input_scale > 0.0) || !std::isfinite(input_scale)) {
    throw ConfigError("constraint.input_scale must be positive");
  }
  net.validate();
  if (net.input_dim() != input_dim() || net.output_dim() != 1) {
    throw ConfigError("constraint network must map " + std::to_string(input_dim()) +
                      " inputs to 1 output");
  }
  if (net.output_activation != nn::Activation::sigmoid) {
    throw ConfigError("constraint network must have a sigmoid output");
  }
}

int classify_zeta(double zeta, double threshold) {
  return zeta > threshold ? kFeasible : kInfeasible;
}

int classify(const ConstraintModel& model, const PointState& s) {
  return classify_zeta(model.zeta(s), model.decision_threshold);
}

double threshold_from_f(double f) {
  if (!(f > 0.0 && f <= 1.0)) {
    throw ConfigError("label frequency must lie in (0, 1], got " + std::to_string(f));
  }
  return 0.5 * f;
}

double estimate_label_frequency(const ConstraintModel& model, std::span<const PointState> demos) {
  if (demos.empty()) throw UsageError("estimate_label_frequency: empty demonstration set");
  const auto z = model.zeta(demos);
  return *std::max_element(z.begin(), z.end());
}

ConstraintLoss constraint_loss(const ConstraintModel& model, std::span<const PointState> demos,
                               std::span<const PointState> unlabeled,
                               std::span<const PointState> regularizer_states,
                               double regularization_weight, LossWeighting weighting) {
  if (model.oracle) throw UsageError("constraint_loss: oracle models have no parameters");
  if (demos.empty()) throw UsageError("constraint_loss: empty demonstration set");
  if (unlabeled.empty()) {
    throw UsageError("constraint_loss: no unlabeled states (no high-reward trajectories)");
  }
  const std::size_t n_pos = demos.size();
  const std::size_t n_neg = unlabeled.size();
  const std::size_t n_reg = regularizer_states.size();

  std::vector<PointState> all;
  all.reserve(n_pos + n_neg + n_reg);
  all.insert(all.end(), demos.begin(), demos.end());
  all.insert(all.end(), unlabeled.begin(), unlabeled.end());
  all.insert(all.end(), regularizer_states.begin(), regularizer_states.end());

  const nn::ForwardCache cache = nn::mlp_forward(model.net, model.features(all));
  const nn::Matrix& zeta = cache.output();

  const double w_pos = weighting == LossWeighting::per_set_mean
                           ? 1.0 / static_cast<double>(n_pos)
                           : 1.0 / static_cast<double>(n_pos + n_neg);
  const double w_neg = weighting == LossWeighting::per_set_mean
                           ? 1.0 / static_cast<double>(n_neg)
                           : 1.0 / static_cast<double>(n_pos + n_neg);
  const double w_reg = n_reg > 0 ? regularization_weight / static_cast<double>(n_reg) : 0.0;

  ConstraintLoss out;
  nn::Matrix grad(all.size(), 1);
  for (std::size_t i = 0; i < all.size(); ++i) {
    const double z_raw = zeta(i, 0);
    const double z = std::clamp(z_raw, kZetaFloor, kZetaCeil);
    // The clamp is flat outside its range, so it passes no gradient there.
    const bool inside = z_raw > kZetaFloor && z_raw < kZetaCeil;
    if (i < n_pos) {
      out.positive_term -= w_pos * std::log(z);
      grad(i, 0) = inside ? -w_pos / z : 0.0;
    } else if (i < n_pos + n_neg) {
      out.negative_term -= w_neg * std::log(1.0 - z);
      grad(i, 0) = inside ? w_neg / (1.0 - z) : 0.0;
    } else {
      out.regularizer_term -= w_reg * z_raw;
      grad(i, 0) = -w_reg;
    }
  }
  out.loss = out.positive_term + out.negative_term + out.regularizer_term;
  out.grads = nn::mlp_backward(model.net, cache, grad).param_grads;
  return out;
}

void ConstraintTrainConfig::validate() const {
  if (backward_iterations == 0) throw ConfigError("constraint.backward_iterations must be positive");
  if (!(learning_rate > 0.0)) throw ConfigError("constraint.learning_rate must be positive");
  if (!(regularization_weight >= 0.0)) {
    throw ConfigError("constraint.regularization_weight must be non-negative");
  }
  if (regularizer_samples == 0) throw ConfigError("constraint.regularizer_samples must be positive");
  if (!(regularizer_box.x_max > regularizer_box.x_min) ||
      !(regularizer_box.y_max > regularizer_box.y_min)) {
    throw ConfigError("constraint.regularizer_box must have positive extent");
  }
}

std::vector<PointState> sample_uniform_states(const Box& box, std::size_t n, nn::Rng& rng) {
  std::uniform_real_distribution<double> ux(box.x_min, box.x_max);
  std::uniform_real_distribution<double> uy(box.y_min, box.y_max);
  std::uniform_real_distribution<double> upsi(-std::numbers::pi, std::numbers::pi);
  std::vector<PointState> out(n);
  for (auto& s : out) {
    s.x = ux(rng);
    s.y = uy(rng);
    s.psi = upsi(rng);
  }
  return out;
}

ConstraintTrainReport train_constraint(ConstraintModel& model, nn::AdamState& optimizer,
                                       std::span<const PointState> demos,
                                       std::span<const PointState> unlabeled,
                                       const ConstraintTrainConfig& cfg, nn::Rng& rng) {
  cfg.validate();
  ConstraintTrainReport report;
  for (std::size_t it = 0; it < cfg.backward_iterations; ++it) {
    const auto reg = sample_uniform_states(cfg.regularizer_box, cfg.regularizer_samples, rng);
    ConstraintLoss l = constraint_loss(model, demos, unlabeled, reg, cfg.regularization_weight,
                                       cfg.weighting);
    if (!std::isfinite(l.loss)) {
      throw TrainingError("train_constraint: non-finite loss at iteration " + std::to_string(it));
    }
    if (it == 0) report.initial_loss = l.loss;
    report.losses.push_back(l.loss);
    nn::adam_step(model.net, l.grads, optimizer, cfg.learning_rate,
                  "train_constraint iteration " + std::to_string(it));
    ++report.iterations;
  }
  for (const auto& w : model.net.weights) {
    if (!w.all_finite()) throw TrainingError("train_constraint: non-finite parameters after update");
  }
  report.final_loss = report.losses.empty() ? 0.0 : report.losses.back();
  return report;
}

ConstraintTrainReport train_constraint(ConstraintModel& model, std::span<const PointState> demos,
                                       std::span<const PointState> unlabeled,
                                       const ConstraintTrainConfig& cfg, nn::Rng& rng) {
  nn::AdamState optimizer = nn::AdamState::for_params(model.net);
  return train_constraint(model, optimizer, demos, unlabeled, cfg, rng);
}

std::vector<PointState> lattice(const Box& box, std::size_t resolution) {
  if (resolution == 0) throw UsageError("grid resolution must be positive");
  std::vector<PointState> pts;
  pts.reserve(resolution * resolution);
  const double hx = (box.x_max - box.x_min) / static_cast<double>(resolution);
  const double hy = (box.y_max - box.y_min) / static_cast<double>(resolution);
  for (std::size_t j = 0; j < resolution; ++j) {
    const double y = box.y_min + (static_cast<double>(j) + 0.5) * hy;
    for (std::size_t i = 0; i < resolution; ++i) {
      pts.push_back({box.x_min + (static_cast<double>(i) + 0.5) * hx, y, 0.0});
    }
  }
  return pts;
}

std::vector<GridPoint> evaluate_grid(const ConstraintModel& model, const Box& box,
                                     std::size_t resolution) {
  const auto pts = lattice(box, resolution);
  const auto z = model.zeta(pts);
  std::vector<GridPoint> out(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    out[i] = {pts[i].x, pts[i].y, z[i], classify_zeta(z[i], model.decision_threshold)};
  }
  return out;
}

nlohmann::json to_json(const ConstraintModel& model) {
  nlohmann::json doc{{"format", "pucl-constraint"},
                     {"version", 1},
                     {"label_frequency", model.label_frequency},
                     {"decision_threshold", model.decision_threshold}};
  if (model.oracle) {
    doc["oracle"] = to_json(*model.oracle);
  } else {
    doc["input"] = to_string(model.input);
    doc["input_scale"] = model.input_scale;
    doc["net"] = nn::to_json(model.net);
  }
  return doc;
}

ConstraintModel constraint_from_json(const nlohmann::json& doc) {
  using detail::require;
  if (require<std::string>(doc, "format", "") != "pucl-constraint") {
    throw ConfigError("not a constraint snapshot");
  }
  if (require<int>(doc, "version", "") != 1) throw ConfigError("unsupported constraint snapshot version");
  ConstraintModel m;
  m.label_frequency = require<double>(doc, "label_frequency", "");
  m.decision_threshold = require<double>(doc, "decision_threshold", "");
  if (doc.contains("oracle")) {
    m.oracle = env_from_json(doc.at("oracle"), "oracle");
  } else {
    m.input = constraint_input_from_string(require<std::string>(doc, "input", ""));
    m.input_scale = require<double>(doc, "input_scale", "");
    m.net = nn::mlp_from_json(detail::require_object(doc, "net", ""));
  }
  m.validate();
  return m;
}

}  // namespace pucl
