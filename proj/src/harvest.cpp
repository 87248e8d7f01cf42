#include "scgs/harvest.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "scgs/error.hpp"
#include "scgs/util.hpp"

namespace scgs {

HarvestResult harvest_from_predictions(const DatasetManifest& manifest, std::span<const int> predictions) {
  auto train = manifest.split(Split::train);
  if (train.empty()) throw InputError("harvest: train split is empty");
  if (train.size() != predictions.size()) throw InputError("harvest: prediction count does not match train split");
  HarvestResult out;
  for (int c = 0; c < static_cast<int>(manifest.n_classes()); ++c) out[c].label = c;
  for (size_t i = 0; i < train.size(); ++i)
    if (predictions[i] != train[i]->label) out[train[i]->label].items.push_back({train[i]->id, predictions[i], {}});
  for (auto& [c, set] : out) {
    std::sort(set.items.begin(), set.items.end(),
              [](const MisclassifiedItem& a, const MisclassifiedItem& b) { return a.image_id < b.image_id; });
    if (set.items.empty()) spdlog::warn("class {} has no misclassified train images; it contributes no samples", c);
  }
  return out;
}

HarvestResult harvest_misclassified(const Classifier& model, const DatasetManifest& manifest) {
  auto train = manifest.split(Split::train);
  if (train.empty()) throw InputError("harvest: train split is empty");
  std::vector<const Image*> imgs;
  imgs.reserve(train.size());
  for (const auto* e : train) {
    if (!e->pixels) throw IoError("harvest: image '" + e->id + "' is not loaded");
    imgs.push_back(e->pixels.get());
  }
  return harvest_from_predictions(manifest, model.predict_batch(imgs));
}

void attach_features(const Classifier& model, const DatasetManifest& manifest, HarvestResult& sets) {
  std::unordered_map<std::string, const LabeledImage*> by_id;
  for (const auto& e : manifest.entries) by_id.emplace(e.id, &e);
  for (auto& [c, set] : sets) {
    std::vector<const Image*> imgs;
    for (const auto& item : set.items) {
      auto it = by_id.find(item.image_id);
      if (it == by_id.end()) throw InputError("attach_features: unknown id '" + item.image_id + "'");
      if (!it->second->pixels) throw IoError("attach_features: image for '" + item.image_id + "' is missing");
      imgs.push_back(it->second->pixels.get());
    }
    if (imgs.empty()) continue;
    Eigen::MatrixXd f = model.features_batch(imgs);
    for (size_t i = 0; i < set.items.size(); ++i) {
      auto col = f.col(static_cast<Eigen::Index>(i));
      set.items[i].features.assign(col.data(), col.data() + col.size());
    }
  }
}

size_t total_items(const HarvestResult& sets) {
  size_t n = 0;
  for (const auto& [c, s] : sets) n += s.items.size();
  return n;
}

void save_harvest(const HarvestResult& sets, size_t n_classes, const std::filesystem::path& path) {
  std::ostringstream out;
  out << nlohmann::json{{"n_classes", n_classes}}.dump() << '\n';
  for (const auto& [c, set] : sets)
    for (const auto& item : set.items)
      out << nlohmann::json{{"id", item.image_id}, {"label", c}, {"predicted", item.predicted}}.dump() << '\n';
  write_file_atomic(path, out.str());
}

HarvestResult load_harvest(const std::filesystem::path& path, size_t n_classes) {
  std::istringstream in(read_file_text(path));
  HarvestResult out;
  for (int c = 0; c < static_cast<int>(n_classes); ++c) out[c].label = c;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      if (j.contains("n_classes")) continue;
      int label = j.at("label");
      if (label < 0 || static_cast<size_t>(label) >= n_classes) throw ParseError("label out of range");
      out[label].items.push_back({j.at("id").get<std::string>(), j.at("predicted").get<int>(), {}});
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.string() + " line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

namespace {
constexpr char kFeatMagic[8] = {'S', 'C', 'G', 'S', 'F', 'E', 'A', 'T'};
}

void save_features(const HarvestResult& sets, const std::filesystem::path& path) {
  std::uint64_t count = total_items(sets), dim = 0;
  for (const auto& [c, s] : sets)
    for (const auto& it : s.items) {
      if (dim == 0) dim = it.features.size();
      if (it.features.size() != dim) throw InputError("save_features: ragged or missing feature vectors");
    }
  std::string buf(kFeatMagic, sizeof kFeatMagic);
  auto put = [&buf](const void* p, size_t n) { buf.append(static_cast<const char*>(p), n); };
  std::uint32_t version = 1;
  put(&version, sizeof version);
  put(&count, sizeof count);
  put(&dim, sizeof dim);
  for (const auto& [c, s] : sets)
    for (const auto& it : s.items) {
      std::uint32_t len = static_cast<std::uint32_t>(it.image_id.size());
      put(&len, sizeof len);
      put(it.image_id.data(), len);
      put(it.features.data(), dim * sizeof(double));
    }
  write_file_atomic(path, buf);
}

void load_features(const std::filesystem::path& path, HarvestResult& sets) {
  auto bytes = read_file_bytes(path);
  size_t pos = 0;
  auto take = [&](void* dst, size_t n) {
    if (pos + n > bytes.size()) throw IoError(path.string() + ": truncated feature file");
    std::memcpy(dst, bytes.data() + pos, n);
    pos += n;
  };
  char magic[8];
  take(magic, sizeof magic);
  if (std::memcmp(magic, kFeatMagic, sizeof magic) != 0) throw IoError(path.string() + ": not a feature file");
  std::uint32_t version;
  std::uint64_t count, dim;
  take(&version, sizeof version);
  take(&count, sizeof count);
  take(&dim, sizeof dim);
  std::unordered_map<std::string, std::vector<double>> by_id;
  for (std::uint64_t i = 0; i < count; ++i) {
    std::uint32_t len;
    take(&len, sizeof len);
    std::string id(len, '\0');
    take(id.data(), len);
    std::vector<double> v(dim);
    take(v.data(), dim * sizeof(double));
    by_id.emplace(std::move(id), std::move(v));
  }
  for (auto& [c, s] : sets)
    for (auto& it : s.items) {
      auto f = by_id.find(it.image_id);
      if (f == by_id.end()) throw IoError(path.string() + ": no features for '" + it.image_id + "'");
      it.features = f->second;
    }
}

}  // namespace scgs
