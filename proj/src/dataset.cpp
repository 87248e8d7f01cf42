#include "scgs/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "scgs/error.hpp"
#include "scgs/util.hpp"

namespace scgs {

using nlohmann::json;

std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

std::string_view to_string(Provenance p) { return p == Provenance::original ? "original" : "synthesized"; }

Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw ParseError("unknown split '" + std::string(s) + "'");
}

Provenance parse_provenance(std::string_view s) {
  if (s == "original") return Provenance::original;
  if (s == "synthesized") return Provenance::synthesized;
  throw ParseError("unknown provenance '" + std::string(s) + "'");
}

bool LabeledImage::same_as(const LabeledImage& o) const {
  bool pix = (!pixels && !o.pixels) || (pixels && o.pixels && *pixels == *o.pixels);
  return id == o.id && path == o.path && label == o.label && group_attr == o.group_attr && split == o.split &&
         provenance == o.provenance && fg_box == o.fg_box && pix;
}

std::vector<const LabeledImage*> DatasetManifest::split(Split s) const {
  std::vector<const LabeledImage*> out;
  for (const auto& e : entries)
    if (e.split == s) out.push_back(&e);
  return out;
}

const LabeledImage* DatasetManifest::find(std::string_view id) const {
  for (const auto& e : entries)
    if (e.id == id) return &e;
  return nullptr;
}

bool DatasetManifest::same_as(const DatasetManifest& o) const {
  if (class_names != o.class_names || attribute_names != o.attribute_names || seed != o.seed ||
      entries.size() != o.entries.size())
    return false;
  for (size_t i = 0; i < entries.size(); ++i)
    if (!entries[i].same_as(o.entries[i])) return false;
  return true;
}

void validate_manifest(const DatasetManifest& m, bool require_all_splits) {
  std::unordered_set<std::string> ids;
  bool seen[3] = {false, false, false};
  for (const auto& e : m.entries) {
    if (!ids.insert(e.id).second) throw InputError("duplicate entry id '" + e.id + "'");
    if (e.label < 0 || static_cast<size_t>(e.label) >= m.class_names.size())
      throw InputError("entry '" + e.id + "': label out of range");
    if (e.group_attr && (*e.group_attr < 0 || static_cast<size_t>(*e.group_attr) >= m.attribute_names.size()))
      throw InputError("entry '" + e.id + "': attribute out of range");
    seen[static_cast<int>(e.split)] = true;
    if (e.pixels) {
      const Image& img = *e.pixels;
      if (img.height < 8 || img.width < 8 || (img.channels != 1 && img.channels != 3))
        throw InputError("entry '" + e.id + "': image must be at least 8x8 with 1 or 3 channels");
      for (double v : img.data)
        if (!(v >= 0.0 && v <= 1.0)) throw InputError("entry '" + e.id + "': intensity outside [0,1]");
      if (e.fg_box && !e.fg_box->valid_within(img.height, img.width))
        throw InputError("entry '" + e.id + "': fg_box out of bounds");
    }
  }
  if (require_all_splits)
    for (Split s : {Split::train, Split::val, Split::test})
      if (!seen[static_cast<int>(s)]) throw InputError("manifest has no " + std::string(to_string(s)) + " entries");
}

double SynthConfig::faint_probability(int label) const {
  if (faint_prob.empty()) return 0.0;
  return faint_prob[std::min(static_cast<size_t>(label), faint_prob.size() - 1)];
}

void SynthConfig::validate() const {
  if (n_train <= 0 || n_val <= 0 || n_test <= 0) throw ConfigError("split counts must be positive");
  if (n_classes < 2 || n_classes > scene::kMaxClasses)
    throw ConfigError("n_classes must be in [2, " + std::to_string(scene::kMaxClasses) + "]");
  if (n_attributes != n_classes) throw ConfigError("n_attributes must equal n_classes");
  if (!(correlation >= 0.0 && correlation <= 1.0)) throw ConfigError("correlation must lie in [0,1]");
  if (image_size < 8) throw ConfigError("image_size must be at least 8");
  if (!(noise_std >= 0.0)) throw ConfigError("noise_std must be non-negative");
  for (double p : faint_prob)
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("faint_prob entries must lie in [0,1]");
}

namespace scene {

namespace {

void hsv_to_rgb(double h, double s, double v, double out[3]) {
  double hh = std::fmod(h, 1.0) * 6.0;
  int i = static_cast<int>(hh);
  double f = hh - i, p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  double rgb[6][3] = {{v, t, p}, {q, v, p}, {p, v, t}, {p, q, v}, {t, p, v}, {v, p, q}};
  for (int k = 0; k < 3; ++k) out[k] = rgb[i % 6][k];
}

double segment_distance2(const double p[3], const double a[3], const double b[3]) {
  double ab[3], ap[3], len2 = 0, dot = 0;
  for (int k = 0; k < 3; ++k) {
    ab[k] = b[k] - a[k];
    ap[k] = p[k] - a[k];
    len2 += ab[k] * ab[k];
    dot += ab[k] * ap[k];
  }
  double t = len2 > 0 ? std::clamp(dot / len2, 0.0, 1.0) : 0.0;
  double d2 = 0;
  for (int k = 0; k < 3; ++k) {
    double d = ap[k] - t * ab[k];
    d2 += d * d;
  }
  return d2;
}

}  // namespace

Texture texture_for(int attribute, int n_attributes, int image_size) {
  Texture t{};
  double hue = 0.08 + static_cast<double>(attribute) / n_attributes;
  hsv_to_rgb(hue, 0.7, 0.72, t.color_a);
  hsv_to_rgb(hue, 0.7, 0.38, t.color_b);
  t.angle = std::numbers::pi * attribute / n_attributes;
  t.period = std::max(4.0, image_size / 4.0);
  return t;
}

void texture_pixel(const Texture& t, double phase, int r, int c, double out[3]) {
  double u = (c + 0.5) * std::cos(t.angle) + (r + 0.5) * std::sin(t.angle);
  double w = 0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * u / t.period + phase);
  for (int k = 0; k < 3; ++k) out[k] = t.color_a[k] * w + t.color_b[k] * (1.0 - w);
}

bool shape_covers(int label, const Box& box, int r, int c) {
  if (r < box.row0 || r >= box.row1 || c < box.col0 || c >= box.col1) return false;
  double side = std::min(box.row1 - box.row0, box.col1 - box.col0);
  double y = (r + 0.5 - box.row0) / side, x = (c + 0.5 - box.col0) / side;
  double dx = x - 0.5, dy = y - 0.5;
  double dist = std::sqrt(dx * dx + dy * dy);
  switch (label) {
    case 0: {  // ring
      double thick = std::max(1.5 / side, 1.0 / 7.0);
      return dist <= 0.5 && dist >= 0.5 - thick;
    }
    case 1: return dist <= 0.5;  // disk
    case 2: return std::abs(dx) <= y / 2.0;  // triangle
    case 3: return std::abs(dx) <= 1.0 / 6.0 || std::abs(dy) <= 1.0 / 6.0;  // cross
    case 4: return true;  // square
    case 5: return std::abs(dx) + std::abs(dy) <= 0.5;  // diamond
    default: throw InputError("no shape for class " + std::to_string(label));
  }
}

Box sample_box(int height, int width, std::mt19937_64& rng) {
  int size = std::min(height, width);
  int lo = std::max(4, static_cast<int>(std::round(kMinShapeFraction * size)));
  int hi = std::min(size, std::max(lo, static_cast<int>(std::round(kMaxShapeFraction * size))));
  int side = std::uniform_int_distribution<int>(lo, hi)(rng);
  int r0 = std::uniform_int_distribution<int>(0, height - side)(rng);
  int c0 = std::uniform_int_distribution<int>(0, width - side)(rng);
  return Box{r0, c0, r0 + side, c0 + side};
}

double sample_contrast(double faint_prob, std::mt19937_64& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < faint_prob ? kFaintContrast : 1.0;
}

void blend_shape(double px[3], double contrast) {
  for (int k = 0; k < 3; ++k) px[k] = (1.0 - contrast) * px[k] + contrast * kShapeIntensity;
}

int infer_attribute(const Image& img, const std::vector<bool>& select, int n_attributes) {
  int best = 0;
  double best_score = std::numeric_limits<double>::infinity();
  std::vector<double> d2;
  d2.reserve(img.pixel_count());
  for (int a = 0; a < n_attributes; ++a) {
    Texture t = texture_for(a, n_attributes, img.height);
    d2.clear();
    for (int r = 0; r < img.height; ++r)
      for (int c = 0; c < img.width; ++c) {
        size_t idx = static_cast<size_t>(r) * img.width + c;
        if (!select.empty() && !select[idx]) continue;
        double p[3];
        for (int k = 0; k < 3; ++k) p[k] = img.at(r, c, img.channels == 3 ? k : 0);
        d2.push_back(segment_distance2(p, t.color_a, t.color_b));
      }
    if (d2.empty()) return infer_attribute(img, {}, n_attributes);
    auto mid = d2.begin() + static_cast<std::ptrdiff_t>(d2.size() / 2);
    std::nth_element(d2.begin(), mid, d2.end());
    if (*mid < best_score) {
      best_score = *mid;
      best = a;
    }
  }
  return best;
}

}  // namespace scene

namespace {

const char* kShapeNames[scene::kMaxClasses] = {"ring", "disk", "triangle", "cross", "square", "diamond"};

Image render_scene(int label, int attr, int n_attr, int size, double noise_std, double faint_prob,
                   std::mt19937_64& rng, Box& box) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  scene::Texture tex = scene::texture_for(attr, n_attr, size);
  double phase = unit(rng) * 2.0 * std::numbers::pi;
  box = scene::sample_box(size, size, rng);
  double contrast = scene::sample_contrast(faint_prob, rng);

  Image img(size, size, 3);
  std::normal_distribution<double> noise(0.0, noise_std);
  for (int r = 0; r < size; ++r)
    for (int c = 0; c < size; ++c) {
      double px[3];
      scene::texture_pixel(tex, phase, r, c, px);
      if (scene::shape_covers(label, box, r, c)) scene::blend_shape(px, contrast);
      for (int k = 0; k < 3; ++k) img.at(r, c, k) = px[k] + (noise_std > 0 ? noise(rng) : 0.0);
    }
  quantize_8bit(img);
  return img;
}

}  // namespace

DatasetManifest generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  DatasetManifest m;
  m.seed = cfg.seed;
  for (int i = 0; i < cfg.n_classes; ++i) m.class_names.emplace_back(kShapeNames[i]);
  for (int a = 0; a < cfg.n_attributes; ++a) m.attribute_names.push_back("background" + std::to_string(a));

  const std::pair<Split, int> splits[] = {{Split::train, cfg.n_train}, {Split::val, cfg.n_val}, {Split::test, cfg.n_test}};
  m.entries.reserve(static_cast<size_t>(cfg.n_train + cfg.n_val + cfg.n_test));
  for (auto [split, count] : splits) {
    for (int i = 0; i < count; ++i) {
      std::string id = std::string(to_string(split)) + "_" + std::to_string(100000 + i).substr(1);
      std::mt19937_64 rng(derive_seed(cfg.seed, id));
      int label = i % cfg.n_classes;
      int attr;
      if (split == Split::train) {
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        if (unit(rng) < cfg.correlation) {
          attr = label;
        } else {
          attr = std::uniform_int_distribution<int>(0, cfg.n_attributes - 2)(rng);
          if (attr >= label) ++attr;
        }
      } else {
        attr = std::uniform_int_distribution<int>(0, cfg.n_attributes - 1)(rng);
      }
      LabeledImage e;
      e.id = id;
      e.path = "images/" + id + ".png";
      e.label = label;
      e.group_attr = attr;
      e.split = split;
      e.provenance = Provenance::original;
      Box box;
      e.pixels = std::make_shared<const Image>(
          render_scene(label, attr, cfg.n_attributes, cfg.image_size, cfg.noise_std, cfg.faint_probability(label), rng, box));
      e.fg_box = box;
      m.entries.push_back(std::move(e));
    }
  }
  return m;
}

void save_manifest(const DatasetManifest& m, const std::filesystem::path& path, bool write_images) {
  validate_manifest(m, false);
  auto dir = path.parent_path();
  std::ostringstream out;
  out << json{{"class_names", m.class_names}, {"attribute_names", m.attribute_names}, {"seed", m.seed}}.dump() << '\n';
  for (const auto& e : m.entries) {
    std::string rel = e.path.empty() ? "images/" + e.id + ".png" : e.path;
    json rec{{"id", e.id}, {"path", rel}, {"label", e.label}, {"split", to_string(e.split)},
             {"provenance", to_string(e.provenance)}};
    if (e.group_attr) rec["group_attr"] = *e.group_attr;
    if (e.fg_box) rec["fg_box"] = {e.fg_box->row0, e.fg_box->col0, e.fg_box->row1, e.fg_box->col1};
    out << rec.dump() << '\n';
    if (write_images && e.pixels) write_png(dir / rel, *e.pixels);
  }
  write_file_atomic(path, out.str());
}

namespace {

template <typename T>
T field(const json& rec, const char* name, size_t line) {
  auto it = rec.find(name);
  if (it == rec.end()) throw ParseError("line " + std::to_string(line) + ": missing field '" + name + "'");
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw ParseError("line " + std::to_string(line) + ": field '" + name + "' has the wrong type");
  }
}

}  // namespace

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open manifest " + path.string());
  auto dir = path.parent_path();
  DatasetManifest m;
  std::string text;
  size_t line = 0;
  bool header = false;
  std::unordered_set<std::string> ids;
  while (std::getline(f, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    json rec;
    try {
      rec = json::parse(text);
    } catch (const json::exception& ex) {
      throw ParseError("line " + std::to_string(line) + ": invalid JSON (" + ex.what() + ")");
    }
    if (!rec.is_object()) throw ParseError("line " + std::to_string(line) + ": expected an object");
    if (!header) {
      m.class_names = field<std::vector<std::string>>(rec, "class_names", line);
      m.attribute_names = field<std::vector<std::string>>(rec, "attribute_names", line);
      m.seed = field<std::uint64_t>(rec, "seed", line);
      header = true;
      continue;
    }
    LabeledImage e;
    e.id = field<std::string>(rec, "id", line);
    e.path = field<std::string>(rec, "path", line);
    e.label = field<int>(rec, "label", line);
    if (e.label < 0 || static_cast<size_t>(e.label) >= m.class_names.size())
      throw ParseError("line " + std::to_string(line) + ": field 'label' out of range");
    if (rec.contains("group_attr")) {
      e.group_attr = field<int>(rec, "group_attr", line);
      if (*e.group_attr < 0 || static_cast<size_t>(*e.group_attr) >= m.attribute_names.size())
        throw ParseError("line " + std::to_string(line) + ": field 'group_attr' out of range");
    }
    try {
      e.split = parse_split(field<std::string>(rec, "split", line));
      e.provenance = parse_provenance(field<std::string>(rec, "provenance", line));
    } catch (const ParseError& ex) {
      throw ParseError("line " + std::to_string(line) + ": " + ex.what());
    }
    if (rec.contains("fg_box")) {
      auto b = field<std::vector<int>>(rec, "fg_box", line);
      if (b.size() != 4) throw ParseError("line " + std::to_string(line) + ": field 'fg_box' needs 4 integers");
      e.fg_box = Box{b[0], b[1], b[2], b[3]};
    }
    if (!ids.insert(e.id).second) throw ParseError("line " + std::to_string(line) + ": duplicate id '" + e.id + "'");
    auto img_path = dir / e.path;
    if (!std::filesystem::exists(img_path)) throw IoError("missing image file " + img_path.string());
    e.pixels = std::make_shared<const Image>(read_png(img_path));
    if (e.fg_box && !e.fg_box->valid_within(e.pixels->height, e.pixels->width))
      throw ParseError("line " + std::to_string(line) + ": field 'fg_box' out of image bounds");
    m.entries.push_back(std::move(e));
  }
  if (!header) throw ParseError("line 1: missing manifest header");
  validate_manifest(m, true);
  return m;
}

DatasetManifest merge(const DatasetManifest& base, std::span<const LabeledImage> synthesized) {
  std::unordered_set<std::string> ids;
  for (const auto& e : base.entries) ids.insert(e.id);
  DatasetManifest out = base;
  out.entries.reserve(base.entries.size() + synthesized.size());
  for (const auto& s : synthesized) {
    if (s.provenance != Provenance::synthesized) throw MergeError("image '" + s.id + "' is not marked synthesized");
    if (s.split != Split::train) throw MergeError("synthesized image '" + s.id + "' must belong to the train split");
    if (s.label < 0 || static_cast<size_t>(s.label) >= base.class_names.size())
      throw MergeError("synthesized image '" + s.id + "' has an out-of-range label");
    if (!ids.insert(s.id).second) throw MergeError("id collision on '" + s.id + "'");
    out.entries.push_back(s);
  }
  return out;
}

long GroupCounts::total() const {
  long t = 0;
  for (long c : cells) t += c;
  return t;
}

GroupCounts group_counts(const DatasetManifest& m, Split split) {
  GroupCounts g;
  g.n_classes = static_cast<int>(m.class_names.size());
  g.n_attributes = static_cast<int>(m.attribute_names.size());
  g.cells.assign(static_cast<size_t>(g.n_classes) * g.n_attributes, 0);
  std::vector<std::string> missing;
  for (const auto& e : m.entries) {
    if (e.split != split) continue;
    if (!e.group_attr) {
      missing.push_back(e.id);
      continue;
    }
    ++g.cells[static_cast<size_t>(e.label) * g.n_attributes + *e.group_attr];
  }
  if (!missing.empty()) {
    std::string list;
    for (size_t i = 0; i < missing.size() && i < 20; ++i) list += (i ? ", " : "") + missing[i];
    if (missing.size() > 20) list += ", ...";
    throw ReportError(std::to_string(missing.size()) + " entries lack group labels: " + list);
  }
  return g;
}

}  // namespace scgs
