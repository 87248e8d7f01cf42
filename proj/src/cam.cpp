#include "scgs/cam.hpp"

#include <algorithm>
#include <cmath>

#include <spdlog/spdlog.h>

#include "scgs/error.hpp"

namespace scgs {

std::string_view to_string(CamMethod m) { return m == CamMethod::gradcam ? "gradcam" : "gradcampp"; }

CamMethod parse_cam_method(std::string_view s) {
  if (s == "gradcam") return CamMethod::gradcam;
  if (s == "gradcampp") return CamMethod::gradcampp;
  throw ConfigError("unknown CAM method '" + std::string(s) + "'");
}

double Mask::preserve_fraction() const {
  if (bits.data.empty()) return 0.0;
  double s = 0.0;
  for (double b : bits.data) s += b;
  return s / static_cast<double>(bits.data.size());
}

namespace {

// Shared by both methods: w_k = sum_ij alpha_kij * g'_kij, map = relu(sum_k w_k A^k),
// where g' is relu(g) or g.
Plane weighted_map(const ConvProbe& p, const std::vector<double>& alpha, bool relu_gradient) {
  const size_t hw = static_cast<size_t>(p.height) * p.width;
  Plane out(p.height, p.width, 0.0);
  for (int k = 0; k < p.channels; ++k) {
    double w = 0.0;
    for (size_t q = 0; q < hw; ++q) {
      double g = p.score_gradient[k * hw + q];
      w += alpha[k * hw + q] * (relu_gradient ? std::max(g, 0.0) : g);
    }
    for (size_t q = 0; q < hw; ++q) out.data[q] += w * p.activations[k * hw + q];
  }
  for (double& v : out.data) v = std::max(v, 0.0);
  return out;
}

void check_probe(const ConvProbe& p) {
  size_t n = static_cast<size_t>(p.channels) * p.height * p.width;
  if (p.activations.size() != n || p.score_gradient.size() != n) throw InputError("malformed probe");
}

}  // namespace

Plane grad_cam_raw(const ConvProbe& probe) {
  check_probe(probe);
  const double u = 1.0 / static_cast<double>(probe.height * probe.width);
  return weighted_map(probe, std::vector<double>(probe.activations.size(), u), false);
}

std::vector<double> grad_cam_pp_alpha(const ConvProbe& p) {
  check_probe(p);
  const size_t hw = static_cast<size_t>(p.height) * p.width;
  std::vector<double> alpha(p.activations.size(), 0.0);
  for (int k = 0; k < p.channels; ++k) {
    double asum = 0.0;
    for (size_t q = 0; q < hw; ++q) asum += p.activations[k * hw + q];
    for (size_t q = 0; q < hw; ++q) {
      double g = p.score_gradient[k * hw + q];
      double g2 = g * g;
      double denom = 2.0 * g2 + asum * g2 * g;
      alpha[k * hw + q] = denom != 0.0 ? g2 / denom : 0.0;
    }
  }
  return alpha;
}

Plane grad_cam_pp_raw(const ConvProbe& probe, std::optional<double> uniform_alpha) {
  check_probe(probe);
  if (uniform_alpha) return weighted_map(probe, std::vector<double>(probe.activations.size(), *uniform_alpha), false);
  return weighted_map(probe, grad_cam_pp_alpha(probe), true);
}

Plane upsample(const Plane& p, int height, int width, Upsample mode) {
  if (p.height < 1 || p.width < 1 || height < 1 || width < 1) throw InputError("upsample: empty plane");
  Plane out(height, width);
  const double sy = static_cast<double>(p.height) / height, sx = static_cast<double>(p.width) / width;
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c) {
      double y = (r + 0.5) * sy - 0.5, x = (c + 0.5) * sx - 0.5;
      if (mode == Upsample::nearest) {
        int yi = std::clamp(static_cast<int>(std::floor((r + 0.5) * sy)), 0, p.height - 1);
        int xi = std::clamp(static_cast<int>(std::floor((c + 0.5) * sx)), 0, p.width - 1);
        out.at(r, c) = p.at(yi, xi);
        continue;
      }
      y = std::clamp(y, 0.0, static_cast<double>(p.height - 1));
      x = std::clamp(x, 0.0, static_cast<double>(p.width - 1));
      int y0 = static_cast<int>(std::floor(y)), x0 = static_cast<int>(std::floor(x));
      int y1 = std::min(y0 + 1, p.height - 1), x1 = std::min(x0 + 1, p.width - 1);
      double fy = y - y0, fx = x - x0;
      out.at(r, c) = (1 - fy) * ((1 - fx) * p.at(y0, x0) + fx * p.at(y0, x1)) +
                     fy * ((1 - fx) * p.at(y1, x0) + fx * p.at(y1, x1));
    }
  return out;
}

Plane normalize_map(const Plane& p) {
  Plane out = p;
  if (p.data.empty()) return out;
  auto [lo, hi] = std::minmax_element(p.data.begin(), p.data.end());
  double mn = *lo, mx = *hi;
  if (mx <= 0.0) {
    std::fill(out.data.begin(), out.data.end(), 0.0);
  } else if (mx == mn) {
    std::fill(out.data.begin(), out.data.end(), 1.0);
  } else {
    for (double& v : out.data) v = std::clamp((v - mn) / (mx - mn), 0.0, 1.0);
  }
  return out;
}

namespace {

ActivationMap finish(Plane raw, const Image& image, int target_class, CamMethod method, Upsample mode) {
  ActivationMap m;
  m.target_class = target_class;
  m.method = method;
  m.values = normalize_map(upsample(raw, image.height, image.width, mode));
  return m;
}

}  // namespace

ActivationMap grad_cam(const Classifier& model, const Image& image, int target_class, Upsample mode) {
  return finish(grad_cam_raw(model.probe(image, target_class)), image, target_class, CamMethod::gradcam, mode);
}

ActivationMap grad_cam_pp(const Classifier& model, const Image& image, int target_class, Upsample mode) {
  return finish(grad_cam_pp_raw(model.probe(image, target_class)), image, target_class, CamMethod::gradcampp, mode);
}

ActivationMap compute_cam(CamMethod method, const Classifier& model, const Image& image, int target_class,
                          Upsample mode) {
  return method == CamMethod::gradcam ? grad_cam(model, image, target_class, mode)
                                      : grad_cam_pp(model, image, target_class, mode);
}

Mask threshold_mask(const Plane& values, double tau) {
  if (!(tau > 0.0 && tau <= 1.0)) throw InputError("threshold must lie in (0, 1]");
  Mask m;
  m.tau = tau;
  m.bits = Plane(values.height, values.width);
  for (size_t i = 0; i < values.data.size(); ++i) m.bits.data[i] = values.data[i] >= tau ? 1.0 : 0.0;
  return m;
}

Mask threshold_mask(const ActivationMap& map, double tau) {
  Mask m = threshold_mask(map.values, tau);
  m.image_id = map.image_id;
  return m;
}

Mask capped_mask(const ActivationMap& map, double tau, double max_preserve) {
  Mask m = threshold_mask(map, tau);
  if (m.preserve_fraction() <= max_preserve) return m;
  Mask top = threshold_mask(map, 1.0);
  if (top.preserve_fraction() > max_preserve) {
    spdlog::info("mask for '{}' cannot be brought under {:.2f} preserve; regenerating fully", map.image_id, max_preserve);
    std::fill(top.bits.data.begin(), top.bits.data.end(), 0.0);
    top.tau = 1.0;
    return top;
  }
  double lo = tau, hi = 1.0;  // fraction(lo) > cap >= fraction(hi)
  for (int i = 0; i < 60; ++i) {
    double mid = 0.5 * (lo + hi);
    (threshold_mask(map.values, mid).preserve_fraction() > max_preserve ? lo : hi) = mid;
  }
  Mask out = threshold_mask(map, hi);
  spdlog::debug("mask for '{}': tau raised {:.3f} -> {:.3f}", map.image_id, tau, hi);
  return out;
}

void jet(double v, double rgb[3]) {
  v = std::clamp(v, 0.0, 1.0);
  rgb[0] = std::clamp(1.5 - std::abs(4.0 * v - 3.0), 0.0, 1.0);
  rgb[1] = std::clamp(1.5 - std::abs(4.0 * v - 2.0), 0.0, 1.0);
  rgb[2] = std::clamp(1.5 - std::abs(4.0 * v - 1.0), 0.0, 1.0);
}

Image render_overlay(const Image& image, const Plane& map) {
  if (image.height != map.height || image.width != map.width) throw InputError("overlay: map and image sizes differ");
  if (image.channels != 1 && image.channels != 3) throw InputError("overlay: image must have 1 or 3 channels");
  Image out(image.height, image.width, 3);
  for (int r = 0; r < image.height; ++r)
    for (int c = 0; c < image.width; ++c) {
      double rgb[3];
      jet(map.at(r, c), rgb);
      for (int k = 0; k < 3; ++k) out.at(r, c, k) = 0.5 * image.at(r, c, image.channels == 3 ? k : 0) + 0.5 * rgb[k];
    }
  return out;
}

double foreground_attention(const Plane& map, const Box& box) {
  if (!box.valid_within(map.height, map.width)) throw InputError("foreground box is degenerate or out of bounds");
  double inside = 0.0, total = 0.0;
  for (int r = 0; r < map.height; ++r)
    for (int c = 0; c < map.width; ++c) {
      double v = map.at(r, c);
      total += v;
      if (r >= box.row0 && r < box.row1 && c >= box.col0 && c < box.col1) inside += v;
    }
  return total > 0.0 ? inside / total : 0.0;
}

void write_mask_png(const std::filesystem::path& path, const Mask& mask) { write_png(path, plane_to_image(mask.bits)); }

Mask read_mask_png(const std::filesystem::path& path) {
  Image img = read_png(path);
  Mask m;
  m.image_id = path.stem().string();
  m.bits = Plane(img.height, img.width);
  for (int r = 0; r < img.height; ++r)
    for (int c = 0; c < img.width; ++c) m.bits.at(r, c) = img.at(r, c, 0) >= 0.5 ? 1.0 : 0.0;
  return m;
}

void write_map_png(const std::filesystem::path& path, const Plane& map) { write_png(path, plane_to_image(map)); }

}  // namespace scgs
