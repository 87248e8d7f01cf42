#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "scgs/image.hpp"
#include "scgs/model.hpp"

namespace scgs {

enum class CamMethod { gradcam, gradcampp };
enum class Upsample { bilinear, nearest };

std::string_view to_string(CamMethod m);
CamMethod parse_cam_method(std::string_view s);

struct ActivationMap {
  std::string image_id;
  int target_class = 0;
  CamMethod method = CamMethod::gradcam;
  Plane values;  // input resolution, in [0,1]
};

/// Binary preserve mask: 1 = keep the source pixel, 0 = regenerate.
struct Mask {
  std::string image_id;
  Plane bits;
  double tau = 0.0;  // threshold actually applied

  double preserve_fraction() const;
};

/// Grad-CAM raw map at conv resolution: relu(sum_k w_k A^k), w_k = mean of dS/dA^k.
Plane grad_cam_raw(const ConvProbe& probe);

/// Grad-CAM++ raw map. With `uniform_alpha` set, every alpha takes that value
/// and the gradients enter signed, which with 1/(h*w) is exactly grad_cam_raw.
Plane grad_cam_pp_raw(const ConvProbe& probe, std::optional<double> uniform_alpha = std::nullopt);

/// Grad-CAM++ coefficients, laid out like ConvProbe (alpha = 0 where the denominator is 0).
std::vector<double> grad_cam_pp_alpha(const ConvProbe& probe);

/// Half-pixel-centre bilinear or nearest resampling.
Plane upsample(const Plane& p, int height, int width, Upsample mode = Upsample::bilinear);

/// Min-max normalization; an identically zero plane stays zero, a constant
/// positive plane becomes all ones.
Plane normalize_map(const Plane& p);

ActivationMap grad_cam(const Classifier& model, const Image& image, int target_class,
                       Upsample mode = Upsample::bilinear);
ActivationMap grad_cam_pp(const Classifier& model, const Image& image, int target_class,
                          Upsample mode = Upsample::bilinear);
ActivationMap compute_cam(CamMethod method, const Classifier& model, const Image& image, int target_class,
                          Upsample mode = Upsample::bilinear);

/// bits = (values >= tau). tau must lie in (0, 1].
Mask threshold_mask(const ActivationMap& map, double tau);
Mask threshold_mask(const Plane& values, double tau);

/// threshold_mask, then raises tau by bisection until the preserve fraction is
/// at most `max_preserve`. If even tau = 1 keeps too much, the mask is emptied.
Mask capped_mask(const ActivationMap& map, double tau, double max_preserve = 0.9);

/// Jet colormap value for v in [0,1].
void jet(double v, double rgb[3]);

/// 0.5 * image + 0.5 * jet(map), RGB output.
Image render_overlay(const Image& image, const Plane& map);

/// Share of map mass inside the box; 0 when the map sums to 0.
double foreground_attention(const Plane& map, const Box& box);

void write_mask_png(const std::filesystem::path& path, const Mask& mask);
Mask read_mask_png(const std::filesystem::path& path);
void write_map_png(const std::filesystem::path& path, const Plane& map);

}  // namespace scgs
