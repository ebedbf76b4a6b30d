#pragma once

// Experiment configuration documents and the text file formats exchanged with
// plotting scripts. Formats are described in docs/file_formats.md.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pucl/constraint.hpp"
#include "pucl/pipeline.hpp"
#include "pucl/policy.hpp"

namespace pucl {

enum class SnapshotPolicy { every_iteration, final_only };

struct ExperimentConfig {
  std::string name;
  RunConfig run;
  std::vector<std::uint64_t> seeds;
  std::string output_dir;
  SnapshotPolicy snapshots = SnapshotPolicy::every_iteration;

  void validate() const;
  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

// Built-in presets for the two environments.
ExperimentConfig preset_experiment(EnvKind kind);

nlohmann::json to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const ExperimentConfig& cfg);
// Every field is required; ConfigError names the first missing or invalid one.
ExperimentConfig experiment_from_json(const nlohmann::json& doc);

nlohmann::json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const nlohmann::json& doc);

ExperimentConfig load_experiment(const std::filesystem::path& path);

inline constexpr const char* kDemoHeader = "traj,t,x,y,psi,speed,omega,reward,true_violation";

void write_demo_file(std::ostream& os, const DemoSet& demos, EnvKind kind);
void write_demo_file(const std::filesystem::path& path, const DemoSet& demos, EnvKind kind);

struct DemoFile {
  EnvKind kind = EnvKind::circle;
  DemoSet demos;
};

// ParseError carries the offending line number.
DemoFile read_demo_file(std::istream& is);
DemoFile read_demo_file(const std::filesystem::path& path);

void write_trajectory_dump(std::ostream& os, const Trajectory& trajectory);

void write_grid(std::ostream& os, const std::vector<GridPoint>& grid);

// Appends one line per call and flushes, so earlier rows survive an interrupted run.
class CsvAppender {
 public:
  CsvAppender(const std::filesystem::path& path, const std::string& header);
  void append(const std::string& row);

 private:
  std::ofstream out_;
};

void save_constraint(const std::filesystem::path& path, const ConstraintModel& model);
ConstraintModel load_constraint(const std::filesystem::path& path);
void save_policy(const std::filesystem::path& path, const PolicyModel& policy);
PolicyModel load_policy(const std::filesystem::path& path);

}  // namespace pucl
