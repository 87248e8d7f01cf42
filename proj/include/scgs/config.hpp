#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "scgs/cam.hpp"
#include "scgs/dataset.hpp"
#include "scgs/synth.hpp"
#include "scgs/trainer.hpp"

namespace scgs {

/// Flat key-value file: `[section]` headers, `key = value` lines, `#`
/// comments. Values are quoted strings, numbers, true/false, or
/// [comma, separated] number lists. Keys are stored as "section.key".
class KeyValueFile {
 public:
  static KeyValueFile parse(std::string_view text, std::string_view origin = "<config>");

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  const std::map<std::string, std::string>& raw() const { return values_; }

  std::string get_string(const std::string& key) const;
  double get_double(const std::string& key) const;
  long get_int(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<double> get_list(const std::string& key) const;

 private:
  std::map<std::string, std::string> values_;  // raw value text
  std::string origin_;
};

enum class CamChoice { gradcam, gradcampp, none };

std::string_view to_string(CamChoice c);
CamChoice parse_cam_choice(std::string_view s);

struct RunConfig {
  // [dataset]
  std::string dataset_source = "synthetic";  // synthetic | manifest
  std::filesystem::path manifest_path;
  SynthConfig synth;

  // [train]
  TrainConfig train;
  bool finetune = false;  // retrain from the ERM checkpoint instead of scratch
  bool jtt = false;       // also train JTT and JTT+SCGS

  // [pipeline]
  int clusters = 2;
  double sample_fraction = 0.2;
  double tau = 0.6;
  CamChoice cam = CamChoice::gradcampp;
  Upsample upsample = Upsample::bilinear;
  double max_preserve = 0.9;
  double gen_fraction = 0.4;
  std::string backend = "procedural";  // procedural | remote
  std::string endpoint;
  double timeout_s = 30.0;
  int concurrency = 1;
  std::string prompt_template = "{class}";
  int rounds = 1;
  int overlay_count = 8;

  // [run]
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "scgs_run";

  void validate() const;
  /// Canonical text form; parse(to_text()) reproduces the config.
  std::string to_text() const;
  nlohmann::json to_json() const;

  static RunConfig parse(std::string_view text, std::string_view origin = "<config>");
  static RunConfig load(const std::filesystem::path& path);
};

/// Procedural backend options consistent with the dataset's appearance prior.
ProceduralOptions procedural_options(const RunConfig& cfg);

}  // namespace scgs
