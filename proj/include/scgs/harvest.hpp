#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "scgs/dataset.hpp"
#include "scgs/model.hpp"

namespace scgs {

struct MisclassifiedItem {
  std::string image_id;
  int predicted = 0;            // the incorrect prediction f(x) != label
  std::vector<double> features;  // filled by attach_features
};

/// Train images of one class that the classifier gets wrong, ordered by id.
struct MisclassifiedSet {
  int label = 0;
  std::vector<MisclassifiedItem> items;
};

/// One entry per class (possibly empty).
using HarvestResult = std::map<int, MisclassifiedSet>;

HarvestResult harvest_misclassified(const Classifier& model, const DatasetManifest& manifest);

/// Same partition from precomputed predictions aligned with manifest.split(train).
HarvestResult harvest_from_predictions(const DatasetManifest& manifest, std::span<const int> predictions);

void attach_features(const Classifier& model, const DatasetManifest& manifest, HarvestResult& sets);

size_t total_items(const HarvestResult& sets);

/// JSON lines {"id", "label", "predicted"}.
void save_harvest(const HarvestResult& sets, size_t n_classes, const std::filesystem::path& path);
HarvestResult load_harvest(const std::filesystem::path& path, size_t n_classes);

/// Binary feature file keyed by id: "SCGSFEAT", u32 version, u64 count,
/// u64 dim, then per record u32 id length, id bytes, dim little-endian f64.
void save_features(const HarvestResult& sets, const std::filesystem::path& path);
void load_features(const std::filesystem::path& path, HarvestResult& sets);

}  // namespace scgs
