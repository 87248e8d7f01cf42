#include "scgs/synth.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numbers>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "scgs/error.hpp"
#include "scgs/util.hpp"

namespace scgs {

using json = nlohmann::json;

std::string_view to_string(GenMode m) { return m == GenMode::inpaint ? "inpaint" : "img2img"; }

GenMode parse_gen_mode(std::string_view s) {
  if (s == "inpaint") return GenMode::inpaint;
  if (s == "img2img") return GenMode::img2img;
  throw ConfigError("unknown generation mode '" + std::string(s) + "'");
}

GenerationBudget plan_budget(const DatasetManifest& manifest, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("generation fraction must lie in (0, 1]");
  const size_t c = manifest.n_classes();
  if (c < 2) throw InputError("generation budget needs at least two classes");
  GenerationBudget b;
  b.fraction = fraction;
  b.basis.assign(c, 0);
  for (const auto* e : manifest.split(Split::train)) ++b.basis.at(static_cast<size_t>(e->label));
  long total = 0;
  for (long n : b.basis) total += n;
  for (size_t i = 0; i < c; ++i) {
    double others = static_cast<double>(total - b.basis[i]) / static_cast<double>(c - 1);
    b.n_new.push_back(std::lround(fraction * others));
  }
  return b;
}

std::string make_prompt(std::string_view class_name, std::string_view templ) {
  std::string out(templ);
  const std::string key = "{class}";
  for (size_t pos; (pos = out.find(key)) != std::string::npos;) out.replace(pos, key.size(), class_name);
  return out;
}

RequestSet build_requests(const std::map<int, SamplePlan>& plans, const std::map<std::string, Mask>& masks,
                          const GenerationBudget& budget, const DatasetManifest& source, std::uint64_t seed,
                          GenMode mode, std::string_view prompt_template) {
  RequestSet out;
  for (size_t label = 0; label < budget.n_new.size(); ++label) {
    const long want = budget.n_new[label];
    if (want <= 0) continue;
    auto it = plans.find(static_cast<int>(label));
    if (it == plans.end() || it->second.ids.empty()) {
      spdlog::warn("class {}: budget {} but no sampled images, skipping", label, want);
      out.skipped_classes.push_back(static_cast<int>(label));
      continue;
    }
    const auto& ids = it->second.ids;
    for (long n = 0; n < want; ++n) {
      const std::string& sid = ids[static_cast<size_t>(n) % ids.size()];
      const LabeledImage* src = source.find(sid);
      if (!src || !src->pixels) throw InputError("sampled image '" + sid + "' is not in the source manifest");
      if (src->label != static_cast<int>(label)) throw InputError("sampled image '" + sid + "' has another label");
      GenerationRequest r;
      r.request_id = "syn_c" + std::to_string(label) + "_" + std::to_string(100000 + n).substr(1);
      r.source_image_id = sid;
      r.target_label = src->label;
      r.prompt = make_prompt(source.class_names.at(label), prompt_template);
      r.seed = derive_seed(seed, r.request_id);
      r.mode = mode;
      if (mode == GenMode::inpaint) {
        auto m = masks.find(sid);
        if (m == masks.end()) throw InputError("no mask for sampled image '" + sid + "'");
        r.mask = m->second;
        if (r.mask.bits.height != src->pixels->height || r.mask.bits.width != src->pixels->width)
          throw InputError("mask for '" + sid + "' does not match the image size");
      } else {
        r.mask.bits = Plane(src->pixels->height, src->pixels->width, 0.0);
      }
      r.mask.image_id = sid;
      out.requests.push_back(std::move(r));
    }
  }
  return out;
}

int largest_mutable_square(const Plane& mask) {
  std::vector<int> dp(mask.data.size(), 0);
  int best = 0;
  for (int r = 0; r < mask.height; ++r)
    for (int c = 0; c < mask.width; ++c) {
      size_t i = static_cast<size_t>(r) * mask.width + c;
      if (mask.data[i] != 0.0) continue;
      int v = 1;
      if (r > 0 && c > 0) v += std::min({dp[i - mask.width], dp[i - 1], dp[i - mask.width - 1]});
      dp[i] = v;
      best = std::max(best, v);
    }
  return best;
}

namespace {

// Top-left corners of every all-mutable square of the given side.
std::vector<std::pair<int, int>> square_positions(const Plane& mask, int side) {
  std::vector<int> dp(mask.data.size(), 0);
  std::vector<std::pair<int, int>> out;
  for (int r = 0; r < mask.height; ++r)
    for (int c = 0; c < mask.width; ++c) {
      size_t i = static_cast<size_t>(r) * mask.width + c;
      if (mask.data[i] != 0.0) continue;
      int v = 1;
      if (r > 0 && c > 0) v += std::min({dp[i - mask.width], dp[i - 1], dp[i - mask.width - 1]});
      dp[i] = v;
      if (v >= side) out.emplace_back(r - side + 1, c - side + 1);
    }
  return out;
}

// Texture phase that best reproduces the reference pixels.
double fit_phase(const Image& img, const scene::Texture& tex, const std::vector<bool>& select) {
  constexpr int kSteps = 64;
  double best = 0.0, best_err = std::numeric_limits<double>::infinity();
  for (int s = 0; s < kSteps; ++s) {
    double phase = 2.0 * std::numbers::pi * s / kSteps, err = 0.0;
    for (int r = 0; r < img.height; ++r)
      for (int c = 0; c < img.width; ++c) {
        if (!select.empty() && !select[static_cast<size_t>(r) * img.width + c]) continue;
        double px[3];
        scene::texture_pixel(tex, phase, r, c, px);
        for (int k = 0; k < 3; ++k) {
          double d = px[k] - img.at(r, c, img.channels == 3 ? k : 0);
          err += d * d;
        }
      }
    if (err < best_err) {
      best_err = err;
      best = phase;
    }
  }
  return best;
}

double quantize(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

double faint_for(const ProceduralOptions& o, int label) {
  if (o.faint_prob.empty()) return 0.0;
  return o.faint_prob[std::min(static_cast<size_t>(label), o.faint_prob.size() - 1)];
}

LabeledImage stamp(const GenerationRequest& req, Image img) {
  LabeledImage e;
  e.id = req.request_id;
  e.path = "images/" + req.request_id + ".png";
  e.label = req.target_label;
  e.split = Split::train;
  e.provenance = Provenance::synthesized;
  e.pixels = std::make_shared<const Image>(std::move(img));
  return e;
}

LabeledImage img2img(const GenerationRequest& req, const Image& src, int n_attr, const ProceduralOptions& o,
                     std::mt19937_64& rng) {
  const int size = std::min(src.height, src.width);
  int attr = std::uniform_int_distribution<int>(0, n_attr - 1)(rng);
  scene::Texture tex = scene::texture_for(attr, n_attr, size);
  double phase = std::uniform_real_distribution<double>(0.0, 2.0 * std::numbers::pi)(rng);
  Box box = scene::sample_box(src.height, src.width, rng);
  double contrast = scene::sample_contrast(faint_for(o, req.target_label), rng);
  std::normal_distribution<double> noise(0.0, o.noise_std);
  const double w = o.img2img_source_weight;
  Image out(src.height, src.width, 3);
  for (int r = 0; r < src.height; ++r)
    for (int c = 0; c < src.width; ++c) {
      double px[3];
      scene::texture_pixel(tex, phase, r, c, px);
      if (scene::shape_covers(req.target_label, box, r, c)) scene::blend_shape(px, contrast);
      for (int k = 0; k < 3; ++k) {
        double fresh = px[k] + (o.noise_std > 0 ? noise(rng) : 0.0);
        out.at(r, c, k) = quantize(w * src.at(r, c, src.channels == 3 ? k : 0) + (1.0 - w) * fresh);
      }
    }
  LabeledImage e = stamp(req, std::move(out));
  e.fg_box = box;
  e.group_attr = attr;
  return e;
}

}  // namespace

LabeledImage procedural_inpaint(const GenerationRequest& req, const DatasetManifest& source,
                                const ProceduralOptions& o) {
  const LabeledImage* entry = source.find(req.source_image_id);
  if (!entry || !entry->pixels) throw InputError("source image '" + req.source_image_id + "' not found");
  const Image& src = *entry->pixels;
  const int n_attr = static_cast<int>(source.attribute_names.size());
  if (n_attr < 1) throw InputError("source manifest has no attributes");
  std::mt19937_64 rng(req.seed);
  if (req.mode == GenMode::img2img) return img2img(req, src, n_attr, o, rng);

  const Plane& mask = req.mask.bits;
  if (mask.height != src.height || mask.width != src.width) throw InputError("mask does not match the source size");

  const int attr = scene::infer_attribute(src, {}, n_attr);
  const scene::Texture tex = scene::texture_for(attr, n_attr, src.height);
  std::vector<bool> kept(mask.data.size());
  size_t n_kept = 0;
  for (size_t i = 0; i < mask.data.size(); ++i) n_kept += (kept[i] = mask.data[i] != 0.0);
  const double phase = fit_phase(src, tex, n_kept >= 16 ? kept : std::vector<bool>{});

  const int room = largest_mutable_square(mask);
  Box box{0, 0, 0, 0};
  bool draw = n_kept < mask.data.size();
  if (draw) {
    if (room < 4) throw GenerationError("request '" + req.request_id + "': mutable region too small for a shape");
    Box want = scene::sample_box(src.height, src.width, rng);
    int side = want.row1 - want.row0;
    if (side > room) {
      spdlog::debug("request '{}': shape reduced from {} to {} px", req.request_id, side, room);
      side = room;
    }
    auto spots = square_positions(mask, side);
    auto [r0, c0] = spots[std::uniform_int_distribution<size_t>(0, spots.size() - 1)(rng)];
    box = Box{r0, c0, r0 + side, c0 + side};
  }
  const double contrast = scene::sample_contrast(faint_for(o, req.target_label), rng);

  Image out = src.channels == 3 ? src : Image(src.height, src.width, 3);
  std::normal_distribution<double> noise(0.0, o.noise_std);
  for (int r = 0; r < src.height; ++r)
    for (int c = 0; c < src.width; ++c) {
      if (kept[static_cast<size_t>(r) * src.width + c]) {
        for (int k = 0; k < 3; ++k) out.at(r, c, k) = src.at(r, c, src.channels == 3 ? k : 0);
        continue;
      }
      double px[3];
      scene::texture_pixel(tex, phase, r, c, px);
      if (draw && scene::shape_covers(req.target_label, box, r, c)) scene::blend_shape(px, contrast);
      for (int k = 0; k < 3; ++k) out.at(r, c, k) = quantize(px[k] + (o.noise_std > 0 ? noise(rng) : 0.0));
    }
  LabeledImage e = stamp(req, std::move(out));
  if (draw) e.fg_box = box;
  e.group_attr = attr;
  return e;
}

double preserved_mean_abs_diff(const Image& a, const Image& b, const Plane& mask) {
  if (!a.same_shape(b) || a.height != mask.height || a.width != mask.width) throw InputError("size mismatch");
  double s = 0.0;
  size_t n = 0;
  for (int r = 0; r < a.height; ++r)
    for (int c = 0; c < a.width; ++c) {
      if (mask.at(r, c) == 0.0) continue;
      for (int k = 0; k < a.channels; ++k) s += std::abs(a.at(r, c, k) - b.at(r, c, k));
      n += static_cast<size_t>(a.channels);
    }
  return n ? s / static_cast<double>(n) : 0.0;
}

GenerationOutcome run_generation(const std::vector<GenerationRequest>& requests, GenerationBackend& backend,
                                 const DatasetManifest& source, int concurrency_limit) {
  if (concurrency_limit < 1) throw ConfigError("concurrency limit must be >= 1");
  std::vector<std::optional<LabeledImage>> results(requests.size());
  std::vector<std::string> errors(requests.size());
  std::atomic<size_t> next{0};
  auto worker = [&] {
    for (size_t i; (i = next.fetch_add(1)) < requests.size();) {
      try {
        results[i] = backend.generate(requests[i], source);
      } catch (const std::exception& ex) {
        errors[i] = ex.what();
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    const size_t n = std::min(static_cast<size_t>(concurrency_limit), requests.size());
    for (size_t t = 1; t < n; ++t) pool.emplace_back(worker);
    worker();
  }
  GenerationOutcome out;
  for (size_t i = 0; i < requests.size(); ++i) {
    if (results[i]) {
      out.images.push_back(std::move(*results[i]));
    } else {
      spdlog::warn("request '{}' failed: {}", requests[i].request_id, errors[i]);
      out.failures.push_back({requests[i].request_id, requests[i].target_label, errors[i]});
    }
  }
  if (!requests.empty() && out.images.empty())
    throw GenerationError("all " + std::to_string(requests.size()) + " generation requests failed");
  return out;
}

void save_synthesized(const std::filesystem::path& dir, const GenerationOutcome& outcome,
                      const std::vector<GenerationRequest>& requests, std::string_view backend) {
  std::map<std::string, const GenerationRequest*> by_id;
  for (const auto& r : requests) by_id[r.request_id] = &r;
  std::filesystem::create_directories(dir / "images");
  std::ostringstream side;
  for (const auto& img : outcome.images) {
    auto it = by_id.find(img.id);
    if (it == by_id.end()) throw InputError("synthesized image '" + img.id + "' has no request");
    write_png(dir / img.path, *img.pixels);
    json j{{"request_id", img.id}, {"source_id", it->second->source_image_id}, {"label", img.label},
           {"seed", it->second->seed}, {"backend", backend}, {"path", img.path}};
    if (img.fg_box) j["fg_box"] = {img.fg_box->row0, img.fg_box->col0, img.fg_box->row1, img.fg_box->col1};
    if (img.group_attr) j["group_attr"] = *img.group_attr;
    side << j.dump() << '\n';
  }
  write_file_atomic(dir / "sidecar.jsonl", side.str());
}

std::vector<LabeledImage> load_synthesized(const std::filesystem::path& dir) {
  std::istringstream in(read_file_text(dir / "sidecar.jsonl"));
  std::vector<LabeledImage> out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      auto j = json::parse(line);
      LabeledImage e;
      e.id = j.at("request_id");
      e.path = j.value("path", "images/" + e.id + ".png");
      e.label = j.at("label");
      e.split = Split::train;
      e.provenance = Provenance::synthesized;
      if (j.contains("group_attr")) e.group_attr = j["group_attr"].get<int>();
      if (j.contains("fg_box")) {
        auto b = j["fg_box"].get<std::vector<int>>();
        if (b.size() != 4) throw ParseError("fg_box needs 4 entries");
        e.fg_box = Box{b[0], b[1], b[2], b[3]};
      }
      e.pixels = std::make_shared<const Image>(read_png(dir / e.path));
      out.push_back(std::move(e));
    } catch (const json::exception& ex) {
      throw ParseError((dir / "sidecar.jsonl").string() + " line " + std::to_string(lineno) + ": " + ex.what());
    }
  }
  return out;
}

void save_requests(const std::filesystem::path& path, const std::vector<GenerationRequest>& requests) {
  std::ostringstream out;
  for (const auto& r : requests)
    out << json{{"request_id", r.request_id}, {"source_id", r.source_image_id}, {"label", r.target_label},
                {"prompt", r.prompt}, {"seed", r.seed}, {"mode", to_string(r.mode)},
                {"mask_tau", r.mask.tau}, {"preserve_fraction", r.mask.preserve_fraction()}}
               .dump()
        << '\n';
  write_file_atomic(path, out.str());
}

}  // namespace scgs
