#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "scgs/dataset.hpp"
#include "scgs/model.hpp"

namespace scgs {

enum class LrSchedule { constant, cosine };

struct TrainConfig {
  int epochs = 16;
  int batch_size = 64;
  double learning_rate = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::uint64_t seed = 0;
  LrSchedule schedule = LrSchedule::cosine;
  double upweight_factor = 5.0;  // lambda; 1 = plain ERM
  int id_epochs = 2;             // JTT identification-model epochs
  /// Keep the epoch with the best validation score (worst-group when the
  /// validation split carries group labels, average otherwise).
  bool select_on_val = true;
  std::vector<ConvBlockSpec> blocks;  // empty = ArchSpec::default_for
  /// Optional observer called after every epoch.
  std::function<void(int epoch, const Classifier&)> on_epoch;

  void validate() const;
};

struct EpochMetrics {
  int epoch = 0;
  double loss = 0.0;
  std::optional<double> val_avg;
  std::optional<double> val_worst;
};

struct TrainResult {
  Classifier model;
  std::vector<EpochMetrics> history;
  double initial_loss = 0.0;
  int selected_epoch = 0;  // 0 = final parameters
  std::string selection_rule;
};

using GroupKey = std::pair<int, int>;  // (label, attribute)

struct EvalReport {
  Split split = Split::test;
  double avg_acc = 0.0;
  double worst_group_acc = 0.0;
  std::map<GroupKey, double> per_group_acc;
  std::map<GroupKey, long> n_per_group;
  std::vector<GroupKey> empty_groups;

  nlohmann::json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);
};

/// Plain ERM. `init` switches to fine-tuning from existing parameters.
TrainResult train_erm(const DatasetManifest& manifest, const TrainConfig& cfg, const Classifier* init = nullptr);

/// ERM where each example whose id is in `error_ids` contributes `lambda` times
/// its loss (duplication-equivalent weighting). lambda = 1 or an empty id set
/// reproduces train_erm exactly.
TrainResult train_upweighted(const DatasetManifest& manifest, std::span<const std::string> error_ids, double lambda,
                             const TrainConfig& cfg, const Classifier* init = nullptr);

EvalReport evaluate(const Classifier& model, const DatasetManifest& manifest, Split split);

/// Evaluation from precomputed predictions aligned with manifest.split(split).
EvalReport evaluate_predictions(const DatasetManifest& manifest, Split split, std::span<const int> predictions);

}  // namespace scgs
