#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "scgs/cam.hpp"
#include "scgs/cluster.hpp"
#include "scgs/dataset.hpp"

namespace scgs {

enum class GenMode { img2img, inpaint };

std::string_view to_string(GenMode m);
GenMode parse_gen_mode(std::string_view s);

struct GenerationRequest {
  std::string request_id;
  std::string source_image_id;
  Mask mask;  // 1 = preserve
  int target_label = 0;
  std::string prompt;
  std::uint64_t seed = 0;
  GenMode mode = GenMode::inpaint;
};

struct GenerationBudget {
  double fraction = 0.0;
  std::vector<long> basis;  // train count per class
  std::vector<long> n_new;
};

/// n_new(i) = round(fraction * mean train count of the other classes).
GenerationBudget plan_budget(const DatasetManifest& manifest, double fraction);

struct RequestSet {
  std::vector<GenerationRequest> requests;
  std::vector<int> skipped_classes;  // budget > 0 but nothing sampled
};

/// Prompt text for a class; `templ` may contain "{class}".
std::string make_prompt(std::string_view class_name, std::string_view templ = "{class}");

/// Cycles through each class's sampled ids until n_new(i) requests exist.
/// Inpaint requests need a mask per sampled id; img2img requests carry an
/// all-zero mask of the source's size.
RequestSet build_requests(const std::map<int, SamplePlan>& plans, const std::map<std::string, Mask>& masks,
                          const GenerationBudget& budget, const DatasetManifest& source, std::uint64_t seed,
                          GenMode mode = GenMode::inpaint, std::string_view prompt_template = "{class}");

struct ProceduralOptions {
  double noise_std = 0.05;
  /// Foreground appearance prior, as in SynthConfig; empty = always opaque.
  std::vector<double> faint_prob = SynthConfig{}.faint_prob;
  /// img2img output = w * source + (1 - w) * fresh render.
  double img2img_source_weight = 0.25;
};

/// Side of the largest square made only of mask = 0 pixels.
int largest_mutable_square(const Plane& mask);

LabeledImage procedural_inpaint(const GenerationRequest& request, const DatasetManifest& source,
                                const ProceduralOptions& options = {});

/// Mean |a - b| over pixels with mask = 1 (0 when nothing is preserved).
double preserved_mean_abs_diff(const Image& a, const Image& b, const Plane& mask);

class GenerationBackend {
 public:
  virtual ~GenerationBackend() = default;
  virtual std::string name() const = 0;
  /// Must be safe to call concurrently.
  virtual LabeledImage generate(const GenerationRequest& request, const DatasetManifest& source) = 0;
};

class ProceduralBackend : public GenerationBackend {
 public:
  explicit ProceduralBackend(ProceduralOptions options = {}) : options_(std::move(options)) {}
  std::string name() const override { return "procedural"; }
  LabeledImage generate(const GenerationRequest& request, const DatasetManifest& source) override {
    return procedural_inpaint(request, source, options_);
  }

 private:
  ProceduralOptions options_;
};

struct GenerationFailure {
  std::string request_id;
  int label = 0;
  std::string message;
};

struct GenerationOutcome {
  std::vector<LabeledImage> images;  // request order, failures omitted
  std::vector<GenerationFailure> failures;
};

/// Runs requests with at most `concurrency_limit` in flight. Throws
/// GenerationError only when every request fails.
GenerationOutcome run_generation(const std::vector<GenerationRequest>& requests, GenerationBackend& backend,
                                 const DatasetManifest& source, int concurrency_limit = 1);

/// Writes images/<id>.png and sidecar.jsonl
/// ({"request_id","source_id","label","seed","backend"} per line) under `dir`.
void save_synthesized(const std::filesystem::path& dir, const GenerationOutcome& outcome,
                      const std::vector<GenerationRequest>& requests, std::string_view backend);
std::vector<LabeledImage> load_synthesized(const std::filesystem::path& dir);

void save_requests(const std::filesystem::path& path, const std::vector<GenerationRequest>& requests);

}  // namespace scgs
