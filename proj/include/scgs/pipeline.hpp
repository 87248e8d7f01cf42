#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "scgs/config.hpp"
#include "scgs/report.hpp"
#include "scgs/synth.hpp"

namespace scgs {

enum class Stage { data, train, harvest, cluster, cam, synth, merge, retrain, eval, report };

inline constexpr Stage kStages[] = {Stage::data,  Stage::train, Stage::harvest, Stage::cluster, Stage::cam,
                                    Stage::synth, Stage::merge, Stage::retrain, Stage::eval,    Stage::report};

/// Subcommand name ("gen-data", "train", ...).
std::string_view to_string(Stage s);
Stage parse_stage(std::string_view s);

/// Hex SHA-256 of a file, or of the sorted (relative path, file hash) list of a directory.
std::string checksum_path(const std::filesystem::path& p);

struct StageRecord {
  std::string fingerprint;  // config subset + input checksums
  std::map<std::string, std::string> inputs;     // relative path -> checksum
  std::map<std::string, std::string> artifacts;  // relative path -> checksum
  double seconds = 0.0;
  nlohmann::json info = nlohmann::json::object();
};

struct RunManifest {
  nlohmann::json config;
  std::map<std::string, StageRecord> stages;  // keyed by stage name (round-qualified past round 1)
  nlohmann::json versions;

  nlohmann::json to_json() const;
  static RunManifest from_json(const nlohmann::json& j);
};

RunManifest load_run_manifest(const std::filesystem::path& run_dir);

class Pipeline {
 public:
  explicit Pipeline(RunConfig cfg);

  /// All stages in order, skipping those whose fingerprint and artifacts match.
  RunManifest run();
  /// One stage; throws DependencyError naming the first missing upstream stage.
  /// Returns true when the stage ran, false when it was skipped.
  bool run_stage(Stage s, bool force = false);

  /// Replaces the backend built from the config (used with remote test servers).
  void set_backend(std::shared_ptr<GenerationBackend> backend) { backend_ = std::move(backend); }
  void set_round(int round) { round_ = round; }

  const RunManifest& manifest() const { return manifest_; }
  const RunConfig& config() const { return cfg_; }
  const std::filesystem::path& dir() const { return dir_; }

 private:
  struct StageIo {
    std::vector<std::string> inputs;
    std::vector<std::string> artifacts;
    std::vector<std::string> config_keys;
  };

  std::string prefix() const;
  std::string key(Stage s) const;
  StageIo io(Stage s) const;
  std::vector<Stage> requires_(Stage s) const;
  bool complete(Stage s) const;
  std::string fingerprint(Stage s, const StageIo& io, std::map<std::string, std::string>& inputs) const;
  void execute(Stage s);
  void save_manifest_file() const;

  void stage_data();
  void stage_train();
  void stage_harvest();
  void stage_cluster();
  void stage_cam();
  void stage_synth();
  void stage_merge();
  void stage_retrain();
  void stage_eval();
  void stage_report();

  std::filesystem::path p(const std::string& rel) const { return dir_ / rel; }

  RunConfig cfg_;
  std::filesystem::path dir_;
  RunManifest manifest_;
  std::shared_ptr<GenerationBackend> backend_;
  int round_ = 1;
  nlohmann::json stage_info_;
};

RunManifest run_pipeline(const RunConfig& cfg);

/// Test-split results of every variant present in a finished run directory.
std::vector<VariantResult> load_variants(const std::filesystem::path& run_dir);

}  // namespace scgs
