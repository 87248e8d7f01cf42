#include "scgs/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <unordered_set>

#include <spdlog/spdlog.h>

#include "scgs/error.hpp"
#include "scgs/util.hpp"

namespace scgs {

void TrainConfig::validate() const {
  if (epochs < 1 || batch_size < 1 || id_epochs < 1) throw ConfigError("epochs, batch_size and id_epochs must be >= 1");
  if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate must be non-negative");
  if (!(upweight_factor >= 1.0)) throw ConfigError("upweight_factor must be >= 1");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0,1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
}

namespace {

// Training sees only pixels, labels and ids; group fields never cross this boundary.
struct Sample {
  const Image* pixels;
  int label;
  double weight;
};

std::vector<Sample> training_samples(const DatasetManifest& m, const std::unordered_set<std::string>& upweighted,
                                     double lambda) {
  std::vector<Sample> out;
  for (const auto& e : m.entries) {
    if (e.split != Split::train) continue;
    if (!e.pixels) throw InputError("train entry '" + e.id + "' has no pixels loaded");
    out.push_back({e.pixels.get(), e.label, upweighted.count(e.id) ? lambda : 1.0});
  }
  if (out.empty()) throw InputError("train split is empty");
  return out;
}

double mean_loss(const Classifier& model, const std::vector<Sample>& samples) {
  constexpr size_t kChunk = 256;
  double total = 0.0, wtotal = 0.0;
  std::vector<const Image*> imgs;
  std::vector<int> labels;
  std::vector<double> weights;
  for (size_t s = 0; s < samples.size(); s += kChunk) {
    imgs.clear();
    labels.clear();
    weights.clear();
    double w = 0.0;
    for (size_t i = s; i < std::min(samples.size(), s + kChunk); ++i) {
      imgs.push_back(samples[i].pixels);
      labels.push_back(samples[i].label);
      weights.push_back(samples[i].weight);
      w += samples[i].weight;
    }
    total += model.loss_and_gradient(imgs, labels, weights, nullptr) * w;
    wtotal += w;
  }
  return total / wtotal;
}

bool all_val_grouped(const DatasetManifest& m) {
  auto val = m.split(Split::val);
  return !val.empty() && std::all_of(val.begin(), val.end(), [](const LabeledImage* e) { return e->group_attr.has_value(); });
}

TrainResult run_training(const DatasetManifest& manifest, std::vector<Sample> samples, const TrainConfig& cfg,
                         const Classifier* init) {
  cfg.validate();
  const Image& first = *samples.front().pixels;
  ArchSpec arch = ArchSpec::default_for(first.height, first.width, first.channels,
                                        static_cast<int>(manifest.class_names.size()));
  if (!cfg.blocks.empty()) arch.blocks = cfg.blocks;

  TrainResult result;
  result.model = init ? *init : Classifier(arch, derive_seed(cfg.seed, "init"));
  if (init && result.model.spec().n_classes != arch.n_classes)
    throw InputError("initial classifier has the wrong number of classes");
  Classifier& model = result.model;
  result.initial_loss = mean_loss(model, samples);

  const bool have_val = !manifest.split(Split::val).empty();
  const bool by_worst = have_val && all_val_grouped(manifest);
  const bool select = cfg.select_on_val && have_val;
  result.selection_rule = !select ? "final" : (by_worst ? "best_val_worst_group" : "best_val_average");

  const size_t n = samples.size();
  const size_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const size_t total_steps = steps_per_epoch * cfg.epochs;
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(derive_seed(cfg.seed, "shuffle"));
  std::vector<double> velocity(model.parameter_count(), 0.0), grad;
  std::vector<const Image*> imgs;
  std::vector<int> labels;
  std::vector<double> weights;
  std::vector<double> best_params;
  double best_score = -1.0;
  size_t step = 0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0, epoch_w = 0.0;
    for (size_t s = 0; s < n; s += cfg.batch_size, ++step) {
      imgs.clear();
      labels.clear();
      weights.clear();
      double bw = 0.0;
      for (size_t i = s; i < std::min(n, s + cfg.batch_size); ++i) {
        const Sample& smp = samples[order[i]];
        imgs.push_back(smp.pixels);
        labels.push_back(smp.label);
        weights.push_back(smp.weight);
        bw += smp.weight;
      }
      double loss = model.loss_and_gradient(imgs, labels, weights, &grad);
      if (!std::isfinite(loss))
        throw TrainingError("loss diverged at epoch " + std::to_string(epoch) + ", step " + std::to_string(step));
      epoch_loss += loss * bw;
      epoch_w += bw;
      double lr = cfg.learning_rate;
      if (cfg.schedule == LrSchedule::cosine)
        lr *= 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total_steps)));
      auto params = model.parameters();
      for (size_t p = 0; p < params.size(); ++p) {
        velocity[p] = cfg.momentum * velocity[p] + grad[p] + cfg.weight_decay * params[p];
        params[p] -= lr * velocity[p];
      }
    }
    EpochMetrics em;
    em.epoch = epoch;
    em.loss = epoch_loss / epoch_w;
    if (!std::isfinite(em.loss)) throw TrainingError("non-finite mean loss at epoch " + std::to_string(epoch));
    if (have_val) {
      EvalReport val = evaluate(model, manifest, Split::val);
      em.val_avg = val.avg_acc;
      if (by_worst) em.val_worst = val.worst_group_acc;
      double score = by_worst ? val.worst_group_acc : val.avg_acc;
      if (select && score >= best_score) {
        best_score = score;
        best_params.assign(model.parameters().begin(), model.parameters().end());
        result.selected_epoch = epoch;
      }
    }
    spdlog::debug("epoch {} loss {:.4f}{}", epoch, em.loss,
                  em.val_avg ? fmt::format(" val_avg {:.3f}", *em.val_avg) : std::string());
    result.history.push_back(em);
    if (cfg.on_epoch) cfg.on_epoch(epoch, model);
  }
  if (select && !best_params.empty()) std::copy(best_params.begin(), best_params.end(), model.parameters().begin());
  return result;
}

}  // namespace

TrainResult train_erm(const DatasetManifest& manifest, const TrainConfig& cfg, const Classifier* init) {
  TrainResult r = run_training(manifest, training_samples(manifest, {}, 1.0), cfg, init);
  r.model.set_provenance("erm");
  return r;
}

TrainResult train_upweighted(const DatasetManifest& manifest, std::span<const std::string> error_ids, double lambda,
                             const TrainConfig& cfg, const Classifier* init) {
  if (!(lambda >= 1.0)) throw InputError("upweight factor must be >= 1");
  std::unordered_set<std::string> train_ids;
  for (const auto& e : manifest.entries)
    if (e.split == Split::train) train_ids.insert(e.id);
  std::unordered_set<std::string> ids;
  for (const auto& id : error_ids) {
    if (!train_ids.count(id)) throw InputError("error id '" + id + "' is not a train entry");
    ids.insert(id);
  }
  TrainResult r = run_training(manifest, training_samples(manifest, ids, lambda), cfg, init);
  r.model.set_provenance("upweighted");
  return r;
}

EvalReport evaluate_predictions(const DatasetManifest& manifest, Split split, std::span<const int> predictions) {
  auto entries = manifest.split(split);
  if (entries.size() != predictions.size()) throw InputError("prediction count does not match split size");
  if (entries.empty()) throw EvaluationError("split " + std::string(to_string(split)) + " is empty");
  EvalReport r;
  r.split = split;
  std::map<GroupKey, long> correct;
  long total_correct = 0;
  for (size_t i = 0; i < entries.size(); ++i) {
    const auto* e = entries[i];
    if (!e->group_attr) throw EvaluationError("entry '" + e->id + "' has no group label");
    GroupKey g{e->label, *e->group_attr};
    ++r.n_per_group[g];
    bool ok = predictions[i] == e->label;
    correct[g] += ok;
    total_correct += ok;
  }
  r.avg_acc = static_cast<double>(total_correct) / static_cast<double>(entries.size());
  r.worst_group_acc = 1.0;
  for (const auto& [g, n] : r.n_per_group) {
    double acc = static_cast<double>(correct[g]) / static_cast<double>(n);
    r.per_group_acc[g] = acc;
    r.worst_group_acc = std::min(r.worst_group_acc, acc);
  }
  for (int l = 0; l < static_cast<int>(manifest.class_names.size()); ++l)
    for (int a = 0; a < static_cast<int>(manifest.attribute_names.size()); ++a)
      if (!r.n_per_group.count({l, a})) r.empty_groups.push_back({l, a});
  return r;
}

EvalReport evaluate(const Classifier& model, const DatasetManifest& manifest, Split split) {
  auto entries = manifest.split(split);
  for (const auto* e : entries)
    if (!e->group_attr) throw EvaluationError("entry '" + e->id + "' has no group label");
  std::vector<const Image*> imgs;
  imgs.reserve(entries.size());
  for (const auto* e : entries) imgs.push_back(e->pixels.get());
  std::vector<int> preds = entries.empty() ? std::vector<int>{} : model.predict_batch(imgs);
  return evaluate_predictions(manifest, split, preds);
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json groups = nlohmann::json::array();
  for (const auto& [g, acc] : per_group_acc)
    groups.push_back({{"label", g.first}, {"attribute", g.second}, {"accuracy", acc}, {"count", n_per_group.at(g)}});
  nlohmann::json empty = nlohmann::json::array();
  for (const auto& g : empty_groups) empty.push_back({g.first, g.second});
  return {{"split", to_string(split)}, {"avg_acc", avg_acc}, {"worst_group_acc", worst_group_acc},
          {"groups", groups}, {"empty_groups", empty}};
}

EvalReport EvalReport::from_json(const nlohmann::json& j) {
  EvalReport r;
  r.split = parse_split(j.at("split").get<std::string>());
  r.avg_acc = j.at("avg_acc");
  r.worst_group_acc = j.at("worst_group_acc");
  for (const auto& g : j.at("groups")) {
    GroupKey k{g.at("label"), g.at("attribute")};
    r.per_group_acc[k] = g.at("accuracy");
    r.n_per_group[k] = g.at("count");
  }
  for (const auto& g : j.at("empty_groups")) r.empty_groups.push_back({g.at(0), g.at(1)});
  return r;
}

}  // namespace scgs
