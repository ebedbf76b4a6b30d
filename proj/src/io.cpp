#include "pucl/io.hpp"

#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "json_util.hpp"
#include "pucl/errors.hpp"

namespace pucl {

using nlohmann::json;
using detail::require;
using detail::require_object;

namespace {

json box_json(const Box& b) { return {b.x_min, b.x_max, b.y_min, b.y_max}; }

Box box_from(const json& doc, const std::string& key, const std::string& path) {
  const auto v = require<std::vector<double>>(doc, key, path);
  if (v.size() != 4) throw ConfigError(path + "." + key + " must be [x_min, x_max, y_min, y_max]");
  return {v[0], v[1], v[2], v[3]};
}

std::string to_string(SnapshotPolicy p) {
  return p == SnapshotPolicy::every_iteration ? "every_iteration" : "final_only";
}

SnapshotPolicy snapshot_policy_from(const std::string& s) {
  if (s == "every_iteration") return SnapshotPolicy::every_iteration;
  if (s == "final_only") return SnapshotPolicy::final_only;
  throw ConfigError("snapshots must be 'every_iteration' or 'final_only'");
}

// Shortest representation that reads back to the same double.
std::string real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

json to_json(const RunConfig& c) {
  const auto& p = c.ppo;
  const auto& k = c.constraint;
  const auto& m = c.constraint_model;
  const auto& e = c.expert;
  return {
      {"env", to_json(c.env)},
      {"ppo",
       {{"gamma", p.gamma},
        {"gae_lambda", p.gae_lambda},
        {"clip_epsilon", p.clip_epsilon},
        {"entropy_coef", p.entropy_coef},
        {"value_coef", p.value_coef},
        {"learning_rate", p.learning_rate},
        {"value_learning_rate", p.value_learning_rate},
        {"max_grad_norm", p.max_grad_norm},
        {"epochs", p.epochs},
        {"minibatch_size", p.minibatch_size},
        {"forward_iterations", p.forward_iterations},
        {"forward_timesteps", p.forward_timesteps},
        {"penalty_weight", p.penalty_weight},
        {"policy_hidden", p.policy_hidden},
        {"value_hidden", p.value_hidden},
        {"init_log_std", p.init_log_std},
        {"log_std_min", p.log_std_min}}},
      {"constraint",
       {{"hidden_sizes", k.hidden_sizes},
        {"learning_rate", k.learning_rate},
        {"backward_iterations", k.backward_iterations},
        {"regularization_weight", k.regularization_weight},
        {"regularizer_samples", k.regularizer_samples},
        {"regularizer_box", box_json(k.regularizer_box)},
        {"loss_weighting", to_string(k.weighting)},
        {"reset_optimizer", k.reset_optimizer},
        {"label_frequency", m.label_frequency},
        {"decision_threshold", m.decision_threshold ? json(*m.decision_threshold) : json(nullptr)},
        {"estimate_label_frequency", m.estimate_label_frequency},
        {"input", to_string(m.input)},
        {"input_scale", m.input_scale}}},
      {"expert",
       {{"trajectories", e.trajectories},
        {"min_updates", e.min_updates},
        {"max_updates", e.max_updates},
        {"plateau_window", e.plateau_window},
        {"plateau_tolerance", e.plateau_tolerance},
        {"penalty_weight", e.penalty_weight},
        {"entropy_coef", e.entropy_coef},
        {"max_attempts", e.max_attempts},
        {"symmetrize", e.symmetrize}}},
      {"run",
       {{"iterations", c.iterations},
        {"filter_alpha", c.filter_alpha},
        {"memory_fraction", c.memory_fraction},
        {"cmr_enabled", c.cmr_enabled},
        {"filter_enabled", c.filter_enabled},
        {"eval_episodes", c.eval_episodes},
        {"iou_resolution", c.iou_resolution},
        {"iou_include_known", c.iou_include_known}}},
      {"network", {{"leaky_slope", c.leaky_slope}}},
  };
}

RunConfig run_config_from_json(const json& doc) {
  RunConfig c;
  c.env = env_from_json(require_object(doc, "env", ""), "env");

  const json& p = require_object(doc, "ppo", "");
  c.ppo.gamma = require<double>(p, "gamma", "ppo");
  c.ppo.gae_lambda = require<double>(p, "gae_lambda", "ppo");
  c.ppo.clip_epsilon = require<double>(p, "clip_epsilon", "ppo");
  c.ppo.entropy_coef = require<double>(p, "entropy_coef", "ppo");
  c.ppo.value_coef = require<double>(p, "value_coef", "ppo");
  c.ppo.learning_rate = require<double>(p, "learning_rate", "ppo");
  c.ppo.value_learning_rate = require<double>(p, "value_learning_rate", "ppo");
  c.ppo.max_grad_norm = require<double>(p, "max_grad_norm", "ppo");
  c.ppo.epochs = require<std::size_t>(p, "epochs", "ppo");
  c.ppo.minibatch_size = require<std::size_t>(p, "minibatch_size", "ppo");
  c.ppo.forward_iterations = require<std::size_t>(p, "forward_iterations", "ppo");
  c.ppo.forward_timesteps = require<std::size_t>(p, "forward_timesteps", "ppo");
  c.ppo.penalty_weight = require<double>(p, "penalty_weight", "ppo");
  c.ppo.policy_hidden = require<std::vector<std::size_t>>(p, "policy_hidden", "ppo");
  c.ppo.value_hidden = require<std::vector<std::size_t>>(p, "value_hidden", "ppo");
  c.ppo.init_log_std = require<double>(p, "init_log_std", "ppo");
  c.ppo.log_std_min = require<double>(p, "log_std_min", "ppo");

  const json& k = require_object(doc, "constraint", "");
  c.constraint.hidden_sizes = require<std::vector<std::size_t>>(k, "hidden_sizes", "constraint");
  c.constraint.learning_rate = require<double>(k, "learning_rate", "constraint");
  c.constraint.backward_iterations = require<std::size_t>(k, "backward_iterations", "constraint");
  c.constraint.regularization_weight = require<double>(k, "regularization_weight", "constraint");
  c.constraint.regularizer_samples = require<std::size_t>(k, "regularizer_samples", "constraint");
  c.constraint.regularizer_box = box_from(k, "regularizer_box", "constraint");
  c.constraint.weighting = loss_weighting_from_string(require<std::string>(k, "loss_weighting", "constraint"));
  c.constraint.reset_optimizer = require<bool>(k, "reset_optimizer", "constraint");
  c.constraint_model.label_frequency = require<double>(k, "label_frequency", "constraint");
  if (!k.contains("decision_threshold")) {
    throw ConfigError("missing config field 'constraint.decision_threshold'");
  }
  if (k.at("decision_threshold").is_null()) {
    c.constraint_model.decision_threshold.reset();
  } else {
    c.constraint_model.decision_threshold = require<double>(k, "decision_threshold", "constraint");
  }
  c.constraint_model.estimate_label_frequency =
      require<bool>(k, "estimate_label_frequency", "constraint");
  c.constraint_model.input = constraint_input_from_string(require<std::string>(k, "input", "constraint"));
  c.constraint_model.input_scale = require<double>(k, "input_scale", "constraint");

  const json& e = require_object(doc, "expert", "");
  c.expert.trajectories = require<std::size_t>(e, "trajectories", "expert");
  c.expert.min_updates = require<std::size_t>(e, "min_updates", "expert");
  c.expert.max_updates = require<std::size_t>(e, "max_updates", "expert");
  c.expert.plateau_window = require<std::size_t>(e, "plateau_window", "expert");
  c.expert.plateau_tolerance = require<double>(e, "plateau_tolerance", "expert");
  c.expert.penalty_weight = require<double>(e, "penalty_weight", "expert");
  c.expert.entropy_coef = require<double>(e, "entropy_coef", "expert");
  c.expert.max_attempts = require<std::size_t>(e, "max_attempts", "expert");
  c.expert.symmetrize = require<bool>(e, "symmetrize", "expert");

  const json& r = require_object(doc, "run", "");
  c.iterations = require<std::size_t>(r, "iterations", "run");
  c.filter_alpha = require<double>(r, "filter_alpha", "run");
  c.memory_fraction = require<std::size_t>(r, "memory_fraction", "run");
  c.cmr_enabled = require<bool>(r, "cmr_enabled", "run");
  c.filter_enabled = require<bool>(r, "filter_enabled", "run");
  c.eval_episodes = require<std::size_t>(r, "eval_episodes", "run");
  c.iou_resolution = require<std::size_t>(r, "iou_resolution", "run");
  c.iou_include_known = require<bool>(r, "iou_include_known", "run");

  c.leaky_slope = require<double>(require_object(doc, "network", ""), "leaky_slope", "network");
  c.validate();
  return c;
}

void ExperimentConfig::validate() const {
  run.validate();
  if (seeds.empty()) throw ConfigError("seeds must list at least one seed");
  if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
}

ExperimentConfig preset_experiment(EnvKind kind) {
  ExperimentConfig c;
  if (kind == EnvKind::circle) {
    c.name = "point-circle";
    c.run = RunConfig::point_circle();
  } else {
    c.name = "point-obstacle";
    c.run = RunConfig::point_obstacle();
  }
  c.seeds = {0, 1, 2, 3, 4};
  c.output_dir = "runs/" + c.name;
  return c;
}

json to_json(const ExperimentConfig& cfg) {
  json doc = to_json(cfg.run);
  doc["format"] = "pucl-experiment";
  doc["version"] = 1;
  doc["name"] = cfg.name;
  doc["seeds"] = cfg.seeds;
  doc["output_dir"] = cfg.output_dir;
  doc["snapshots"] = to_string(cfg.snapshots);
  return doc;
}

ExperimentConfig experiment_from_json(const json& doc) {
  if (!doc.is_object()) throw ConfigError("experiment config must be a JSON object");
  if (require<std::string>(doc, "format", "") != "pucl-experiment") {
    throw ConfigError("config field 'format' must be 'pucl-experiment'");
  }
  if (require<int>(doc, "version", "") != 1) throw ConfigError("config field 'version' must be 1");
  ExperimentConfig c;
  c.name = require<std::string>(doc, "name", "");
  c.seeds = require<std::vector<std::uint64_t>>(doc, "seeds", "");
  c.output_dir = require<std::string>(doc, "output_dir", "");
  c.snapshots = snapshot_policy_from(require<std::string>(doc, "snapshots", ""));
  c.run = run_config_from_json(doc);
  c.validate();
  return c;
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const json& doc) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

ExperimentConfig load_experiment(const std::filesystem::path& path) {
  return experiment_from_json(read_json_file(path));
}

void write_demo_file(std::ostream& os, const DemoSet& demos, EnvKind kind) {
  os << "# pucl-demos v1\n";
  os << "# env=" << to_string(kind) << '\n';
  os << "# trajectories=" << demos.trajectories.size() << '\n';
  os << "# return_mean=" << real(demos.return_mean) << '\n';
  os << "# return_std=" << real(demos.return_std) << '\n';
  os << kDemoHeader << '\n';
  for (std::size_t i = 0; i < demos.trajectories.size(); ++i) {
    for (const auto& r : demos.trajectories[i].steps) {
      os << i << ',' << format_step_record(r) << '\n';
    }
  }
}

void write_demo_file(const std::filesystem::path& path, const DemoSet& demos, EnvKind kind) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_demo_file(out, demos, kind);
}

DemoFile read_demo_file(std::istream& is) {
  std::map<std::string, std::string> header;
  std::string line;
  std::size_t line_no = 0;
  bool saw_columns = false;
  DemoFile out;
  std::vector<Trajectory>& trajs = out.demos.trajectories;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!saw_columns) {
      if (line.rfind("# ", 0) == 0) {
        const auto eq = line.find('=');
        if (eq != std::string::npos) header[line.substr(2, eq - 2)] = line.substr(eq + 1);
        else if (line != "# pucl-demos v1") throw ParseError("unknown demo file header '" + line + "'", line_no);
        continue;
      }
      if (line != kDemoHeader) throw ParseError("expected column header '" + std::string(kDemoHeader) + "'", line_no);
      saw_columns = true;
      continue;
    }
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw ParseError("malformed demo record", line_no);
    const std::string idx_field = line.substr(0, comma);
    char* end = nullptr;
    const unsigned long idx = std::strtoul(idx_field.c_str(), &end, 10);
    if (idx_field.empty() || end != idx_field.c_str() + idx_field.size()) {
      throw ParseError("trajectory index must be a non-negative integer", line_no);
    }
    const StepRecord rec = parse_step_record(line.substr(comma + 1), line_no);
    if (idx == trajs.size()) trajs.emplace_back();
    if (idx + 1 != trajs.size()) throw ParseError("trajectory indices must be contiguous", line_no);
    if (rec.t != trajs.back().steps.size()) throw ParseError("step index out of sequence", line_no);
    trajs.back().push(rec);
  }
  if (!saw_columns) throw ParseError("demo file has no column header", line_no);
  for (const char* key : {"env", "trajectories", "return_mean", "return_std"}) {
    if (!header.contains(key)) throw ParseError(std::string("demo file header lacks '") + key + "'", 0);
  }
  try {
    out.kind = env_kind_from_string(header["env"]);
  } catch (const ConfigError& e) {
    throw ParseError(e.what(), 0);
  }
  if (std::to_string(trajs.size()) != header["trajectories"]) {
    throw ParseError("demo file header announces " + header["trajectories"] + " trajectories, body has " +
                         std::to_string(trajs.size()),
                     0);
  }
  for (auto& t : trajs) t.start = t.steps.empty() ? PointState{} : t.steps.front().state;
  out.demos.recompute_stats();
  const double mean = std::strtod(header["return_mean"].c_str(), nullptr);
  if (std::abs(mean - out.demos.return_mean) > 1e-9 * std::max(1.0, std::abs(mean))) {
    throw ParseError("demo file return_mean does not match the trajectories", 0);
  }
  return out;
}

DemoFile read_demo_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open demo file " + path.string(), 0);
  return read_demo_file(in);
}

void write_trajectory_dump(std::ostream& os, const Trajectory& trajectory) {
  os << kTrajectoryHeader << '\n';
  for (const auto& r : trajectory.steps) os << format_step_record(r) << '\n';
}

void write_grid(std::ostream& os, const std::vector<GridPoint>& grid) {
  os << kGridHeader << '\n';
  char buf[160];
  for (const auto& g : grid) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%d\n", g.x, g.y, g.zeta, g.c);
    os << buf;
  }
}

CsvAppender::CsvAppender(const std::filesystem::path& path, const std::string& header) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  out_.open(path, std::ios::app);
  if (!out_) throw std::runtime_error("cannot open " + path.string());
  if (fresh) {
    out_ << header << '\n';
    out_.flush();
  }
}

void CsvAppender::append(const std::string& row) {
  out_ << row << '\n';
  out_.flush();
}

void save_constraint(const std::filesystem::path& path, const ConstraintModel& model) {
  write_json_file(path, to_json(model));
}

ConstraintModel load_constraint(const std::filesystem::path& path) {
  return constraint_from_json(read_json_file(path));
}

void save_policy(const std::filesystem::path& path, const PolicyModel& policy) {
  write_json_file(path, to_json(policy));
}

PolicyModel load_policy(const std::filesystem::path& path) {
  return policy_from_json(read_json_file(path));
}

}  // namespace pucl
