#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "scgs/image.hpp"

namespace scgs {

enum class Split { train, val, test };
enum class Provenance { original, synthesized };

std::string_view to_string(Split s);
std::string_view to_string(Provenance p);
Split parse_split(std::string_view s);
Provenance parse_provenance(std::string_view s);

/// One image record. `group_attr` is the spurious-attribute index of the
/// (label, attribute) group; only evaluation and reporting code reads it.
struct LabeledImage {
  std::string id;
  std::string path;  // relative to the manifest directory
  std::shared_ptr<const Image> pixels;
  int label = 0;
  std::optional<int> group_attr;
  Split split = Split::train;
  Provenance provenance = Provenance::original;
  std::optional<Box> fg_box;

  /// Field-wise equality, comparing pixel contents rather than pointers.
  bool same_as(const LabeledImage& o) const;
};

struct DatasetManifest {
  std::vector<LabeledImage> entries;
  std::vector<std::string> class_names;
  std::vector<std::string> attribute_names;
  std::uint64_t seed = 0;

  size_t n_classes() const { return class_names.size(); }
  std::vector<const LabeledImage*> split(Split s) const;
  const LabeledImage* find(std::string_view id) const;
  bool same_as(const DatasetManifest& o) const;
};

/// Checks the manifest invariants (unique ids, label/attribute ranges, pixel
/// ranges, boxes in bounds). `require_all_splits` also demands one entry per split.
void validate_manifest(const DatasetManifest& m, bool require_all_splits = true);

struct SynthConfig {
  int n_train = 2000;
  int n_val = 400;
  int n_test = 800;
  int n_classes = 2;
  int n_attributes = 2;
  double correlation = 0.95;
  int image_size = 24;
  double noise_std = 0.05;
  /// Per-class probability that the foreground is drawn nearly invisible
  /// (contrast scene::kFaintContrast); classes past the end reuse the last entry.
  std::vector<double> faint_prob = {0.3, 0.1};
  std::uint64_t seed = 0;

  double faint_probability(int label) const;
  void validate() const;
};

DatasetManifest generate_synthetic(const SynthConfig& cfg);

/// Writes the JSON-lines manifest and, with `write_images`, a PNG for every
/// entry holding pixels. Entries without a path are assigned `images/<id>.png`.
void save_manifest(const DatasetManifest& m, const std::filesystem::path& path, bool write_images = true);
DatasetManifest load_manifest(const std::filesystem::path& path);

DatasetManifest merge(const DatasetManifest& base, std::span<const LabeledImage> synthesized);

/// (label, attribute) -> count table for one split.
struct GroupCounts {
  int n_classes = 0;
  int n_attributes = 0;
  std::vector<long> cells;  // row-major [label][attribute]

  long at(int label, int attr) const { return cells[static_cast<size_t>(label) * n_attributes + attr]; }
  long total() const;
};

GroupCounts group_counts(const DatasetManifest& m, Split split);

/// Procedural scene primitives shared by the generator and the procedural
/// inpainting backend.
namespace scene {

inline constexpr int kMaxClasses = 6;
inline constexpr double kMinShapeFraction = 0.35;
inline constexpr double kMaxShapeFraction = 0.55;

/// Palette pair for an attribute's periodic background texture.
struct Texture {
  double color_a[3];
  double color_b[3];
  double angle;   // stripe orientation (radians)
  double period;  // pixels
};

Texture texture_for(int attribute, int n_attributes, int image_size);

/// Renders the attribute texture with the given phase at pixel (r, c).
void texture_pixel(const Texture& t, double phase, int r, int c, double out[3]);

/// True when pixel (r, c) lies on the class shape inscribed in `box`.
bool shape_covers(int label, const Box& box, int r, int c);

inline constexpr double kShapeIntensity = 0.92;
inline constexpr double kFaintContrast = 0.06;

/// Square foreground box with side in [kMinShapeFraction, kMaxShapeFraction]
/// of the image, uniformly placed.
Box sample_box(int height, int width, std::mt19937_64& rng);

/// 1 (opaque) or kFaintContrast with probability `faint_prob`.
double sample_contrast(double faint_prob, std::mt19937_64& rng);

/// Mixes the shape intensity into a background pixel.
void blend_shape(double px[3], double contrast);

/// Attribute whose palette best explains the selected pixels (median colour
/// distance to the palette). `select` may be empty to use every pixel.
int infer_attribute(const Image& img, const std::vector<bool>& select, int n_attributes);

}  // namespace scene

}  // namespace scgs
