#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "scgs/image.hpp"

namespace scgs {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ConvBlockSpec {
  int out_channels = 8;
  int kernel = 3;
  int stride = 1;
  bool operator==(const ConvBlockSpec&) const = default;
};

/// Plain conv stack: each block is conv (zero padding (k-1)/2) + ReLU, then a
/// global average pool and a linear head.
struct ArchSpec {
  int input_height = 32;
  int input_width = 32;
  int input_channels = 3;
  int n_classes = 2;
  /// Subtracted from every pixel before the first convolution.
  double input_shift = 0.0;
  std::vector<ConvBlockSpec> blocks;

  static ArchSpec default_for(int height, int width, int channels, int n_classes);

  /// Spatial dims after every block; throws SpecError when a block would
  /// collapse the map below 1x1 (stride larger than its input extent, or a
  /// kernel larger than the padded input).
  std::vector<std::pair<int, int>> spatial_dims() const;
  int feature_dim() const { return blocks.empty() ? input_channels : blocks.back().out_channels; }
  size_t parameter_count() const;
  bool operator==(const ArchSpec&) const = default;
};

/// Last-conv-layer activations and the gradient of one class score w.r.t. them.
/// Arrays are channel-major: index (k * h + i) * w + j.
struct ConvProbe {
  int channels = 0, height = 0, width = 0;
  std::vector<double> activations;
  std::vector<double> score_gradient;
  int target_class = 0;
  double score = 0.0;

  double A(int k, int i, int j) const { return activations[(static_cast<size_t>(k) * height + i) * width + j]; }
  double G(int k, int i, int j) const { return score_gradient[(static_cast<size_t>(k) * height + i) * width + j]; }
};

struct FeatureVector {
  std::string image_id;
  std::vector<double> values;
};

class Classifier {
 public:
  Classifier() = default;
  Classifier(ArchSpec spec, std::uint64_t seed);

  const ArchSpec& spec() const { return spec_; }
  std::uint64_t seed() const { return seed_; }
  const std::string& provenance() const { return provenance_; }
  void set_provenance(std::string p) { provenance_ = std::move(p); }

  std::span<double> parameters() { return params_; }
  std::span<const double> parameters() const { return params_; }
  size_t parameter_count() const { return params_.size(); }

  /// Views into the flat parameter vector.
  Eigen::Map<RowMatrix> conv_weight(size_t block);
  Eigen::Map<Eigen::VectorXd> conv_bias(size_t block);
  Eigen::Map<RowMatrix> head_weight();
  Eigen::Map<Eigen::VectorXd> head_bias();
  Eigen::Map<const RowMatrix> head_weight() const;

  /// Logits for each image (n_classes x batch).
  Eigen::MatrixXd forward_batch(std::span<const Image* const> images) const;
  std::vector<double> forward(const Image& image) const;
  int predict(const Image& image) const;
  std::vector<int> predict_batch(std::span<const Image* const> images) const;
  /// Post-pool penultimate vector (dimension = last conv width).
  std::vector<double> features(const Image& image) const;
  Eigen::MatrixXd features_batch(std::span<const Image* const> images) const;
  ConvProbe probe(const Image& image, int target_class) const;

  /// Class logits from last-conv activations laid out as in ConvProbe
  /// (pool + head only).
  std::vector<double> logits_from_activations(std::span<const double> activations) const;

  /// Weighted cross-entropy sum_i w_i * l_i / sum_i w_i and its gradient
  /// w.r.t. every parameter (flat, same layout as parameters()).
  double loss_and_gradient(std::span<const Image* const> images, std::span<const int> labels,
                           std::span<const double> weights, std::vector<double>* gradient) const;

 private:
  struct Layout {
    size_t w_offset, b_offset;
    int in_c, out_c, k, stride, pad, in_h, in_w, out_h, out_w;
  };
  struct Trace;

  void build_layout();
  void check_input(const Image& img) const;
  void run_forward(std::span<const Image* const> images, Trace& trace) const;
  /// Backpropagates dlogits; fills parameter gradient (if non-null) and the
  /// gradient w.r.t. the last conv activations (if non-null).
  void run_backward(const Trace& trace, const Eigen::MatrixXd& dlogits, std::vector<double>* grad,
                    RowMatrix* d_last) const;

  ArchSpec spec_;
  std::uint64_t seed_ = 0;
  std::string provenance_ = "init";
  std::vector<double> params_;
  std::vector<Layout> layout_;
  size_t head_w_offset_ = 0, head_b_offset_ = 0;
};

/// Argmax with ties broken by the lowest index.
int argmax(std::span<const double> logits);

Classifier build_classifier(const ArchSpec& spec, std::uint64_t seed);

void save_checkpoint(const Classifier& c, const std::filesystem::path& path);
Classifier load_checkpoint(const std::filesystem::path& path);
/// Loads and verifies the stored architecture equals `expected`.
Classifier load_checkpoint(const std::filesystem::path& path, const ArchSpec& expected);

}  // namespace scgs
