#include "scgs/config.hpp"

#include <charconv>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "scgs/error.hpp"
#include "scgs/util.hpp"

namespace scgs {

namespace {

std::string trim(std::string_view s) {
  size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  size_t e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

// Drops a trailing comment that is not inside a quoted string.
std::string strip_comment(std::string_view line) {
  bool quoted = false;
  for (size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') quoted = !quoted;
    if (line[i] == '#' && !quoted) return std::string(line.substr(0, i));
  }
  return std::string(line);
}

double to_double(const std::string& s, const std::string& what) {
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw ConfigError(what + ": '" + s + "' is not a number");
  return v;
}

std::string fmt_double(double v) { return fmt::format("{}", v); }

std::string fmt_list(const std::vector<double>& v) {
  std::string out = "[";
  for (size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + fmt_double(v[i]);
  return out + "]";
}

std::string quote(std::string_view s) {
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"' || ch == '\\') out += '\\';
    out += ch;
  }
  return out + "\"";
}

}  // namespace

KeyValueFile KeyValueFile::parse(std::string_view text, std::string_view origin) {
  KeyValueFile f;
  f.origin_ = origin;
  std::istringstream in{std::string(text)};
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = trim(strip_comment(line));
    if (t.empty()) continue;
    auto where = fmt::format("{} line {}", origin, lineno);
    if (t.front() == '[') {
      if (t.back() != ']') throw ParseError(where + ": unterminated section header");
      section = trim(std::string_view(t).substr(1, t.size() - 2));
      if (section.empty()) throw ParseError(where + ": empty section name");
      continue;
    }
    auto eq = t.find('=');
    if (eq == std::string::npos) throw ParseError(where + ": expected key = value");
    std::string key = trim(std::string_view(t).substr(0, eq)), value = trim(std::string_view(t).substr(eq + 1));
    if (key.empty() || value.empty()) throw ParseError(where + ": empty key or value");
    std::string full = section.empty() ? key : section + "." + key;
    if (!f.values_.emplace(full, value).second) throw ParseError(where + ": duplicate key '" + full + "'");
  }
  return f;
}

std::string KeyValueFile::get_string(const std::string& key) const {
  const std::string& v = values_.at(key);
  if (v.size() < 2 || v.front() != '"' || v.back() != '"')
    throw ConfigError(origin_ + ": " + key + " must be a quoted string");
  std::string out;
  for (size_t i = 1; i + 1 < v.size(); ++i) {
    if (v[i] == '\\' && i + 2 < v.size()) ++i;
    out += v[i];
  }
  return out;
}

double KeyValueFile::get_double(const std::string& key) const { return to_double(values_.at(key), origin_ + ": " + key); }

long KeyValueFile::get_int(const std::string& key) const {
  double v = get_double(key);
  if (v != static_cast<double>(static_cast<long>(v))) throw ConfigError(origin_ + ": " + key + " must be an integer");
  return static_cast<long>(v);
}

bool KeyValueFile::get_bool(const std::string& key) const {
  const std::string& v = values_.at(key);
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError(origin_ + ": " + key + " must be true or false");
}

std::vector<double> KeyValueFile::get_list(const std::string& key) const {
  const std::string& v = values_.at(key);
  if (v.size() < 2 || v.front() != '[' || v.back() != ']') throw ConfigError(origin_ + ": " + key + " must be a [list]");
  std::vector<double> out;
  std::string inner = trim(std::string_view(v).substr(1, v.size() - 2));
  if (inner.empty()) return out;
  std::istringstream in(inner);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(to_double(trim(item), origin_ + ": " + key));
  return out;
}

std::string_view to_string(CamChoice c) {
  switch (c) {
    case CamChoice::gradcam: return "gradcam";
    case CamChoice::gradcampp: return "gradcampp";
    default: return "none";
  }
}

CamChoice parse_cam_choice(std::string_view s) {
  if (s == "gradcam") return CamChoice::gradcam;
  if (s == "gradcampp") return CamChoice::gradcampp;
  if (s == "none" || s == "img2img") return CamChoice::none;
  throw ConfigError("unknown CAM method '" + std::string(s) + "' (gradcam, gradcampp, none)");
}

void RunConfig::validate() const {
  if (dataset_source == "synthetic") {
    if (!manifest_path.empty()) throw ConfigError("dataset: give either synthetic parameters or a manifest, not both");
    synth.validate();
  } else if (dataset_source == "manifest") {
    if (manifest_path.empty()) throw ConfigError("dataset: source = manifest needs dataset.manifest");
  } else {
    throw ConfigError("dataset.source must be synthetic or manifest");
  }
  train.validate();
  auto frac = [](double f, const char* name) {
    if (!(f > 0.0 && f <= 1.0)) throw ConfigError(std::string(name) + " must lie in (0, 1]");
  };
  frac(sample_fraction, "pipeline.sample_fraction");
  frac(gen_fraction, "pipeline.gen_fraction");
  frac(tau, "pipeline.tau");
  frac(max_preserve, "pipeline.max_preserve");
  if (clusters < 1) throw ConfigError("pipeline.clusters must be >= 1");
  if (backend != "procedural" && backend != "remote") throw ConfigError("pipeline.backend must be procedural or remote");
  if (backend == "remote" && endpoint.empty()) throw ConfigError("remote backend needs pipeline.endpoint or SCGS_ENDPOINT");
  if (concurrency < 1) throw ConfigError("pipeline.concurrency must be >= 1");
  if (rounds < 1) throw ConfigError("pipeline.rounds must be >= 1");
  if (overlay_count < 0) throw ConfigError("pipeline.overlay_count must be >= 0");
  if (!(timeout_s > 0.0)) throw ConfigError("pipeline.timeout_s must be positive");
}

std::string RunConfig::to_text() const {
  std::string s;
  auto line = [&s](std::string_view k, const std::string& v) { s += fmt::format("{} = {}\n", k, v); };
  s += "[dataset]\n";
  line("source", quote(dataset_source));
  if (!manifest_path.empty()) line("manifest", quote(manifest_path.string()));
  line("n_train", std::to_string(synth.n_train));
  line("n_val", std::to_string(synth.n_val));
  line("n_test", std::to_string(synth.n_test));
  line("n_classes", std::to_string(synth.n_classes));
  line("n_attributes", std::to_string(synth.n_attributes));
  line("correlation", fmt_double(synth.correlation));
  line("image_size", std::to_string(synth.image_size));
  line("noise_std", fmt_double(synth.noise_std));
  line("faint_prob", fmt_list(synth.faint_prob));
  s += "\n[train]\n";
  line("epochs", std::to_string(train.epochs));
  line("batch_size", std::to_string(train.batch_size));
  line("learning_rate", fmt_double(train.learning_rate));
  line("momentum", fmt_double(train.momentum));
  line("weight_decay", fmt_double(train.weight_decay));
  line("schedule", quote(train.schedule == LrSchedule::cosine ? "cosine" : "constant"));
  line("select_on_val", train.select_on_val ? "true" : "false");
  line("finetune", finetune ? "true" : "false");
  line("jtt", jtt ? "true" : "false");
  line("jtt_lambda", fmt_double(train.upweight_factor));
  line("jtt_id_epochs", std::to_string(train.id_epochs));
  s += "\n[pipeline]\n";
  line("clusters", std::to_string(clusters));
  line("sample_fraction", fmt_double(sample_fraction));
  line("tau", fmt_double(tau));
  line("cam", quote(to_string(cam)));
  line("upsample", quote(upsample == Upsample::bilinear ? "bilinear" : "nearest"));
  line("max_preserve", fmt_double(max_preserve));
  line("gen_fraction", fmt_double(gen_fraction));
  line("backend", quote(backend));
  if (!endpoint.empty()) line("endpoint", quote(endpoint));
  line("timeout_s", fmt_double(timeout_s));
  line("concurrency", std::to_string(concurrency));
  line("prompt_template", quote(prompt_template));
  line("rounds", std::to_string(rounds));
  line("overlay_count", std::to_string(overlay_count));
  s += "\n[run]\n";
  line("seed", std::to_string(seed));
  line("output_dir", quote(output_dir.string()));
  return s;
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  auto kv = KeyValueFile::parse(to_text());
  for (const auto& [k, v] : kv.raw()) {
    if (v.front() == '"') {
      j[k] = kv.get_string(k);
    } else if (v.front() == '[') {
      j[k] = kv.get_list(k);
    } else if (v == "true" || v == "false") {
      j[k] = v == "true";
    } else {
      j[k] = kv.get_double(k);
    }
  }
  return j;
}

RunConfig RunConfig::parse(std::string_view text, std::string_view origin) {
  KeyValueFile kv = KeyValueFile::parse(text, origin);
  RunConfig c;
  std::set<std::string> used;
  auto take = [&](const std::string& key) {
    used.insert(key);
    return kv.has(key);
  };
  if (take("dataset.source")) c.dataset_source = kv.get_string("dataset.source");
  if (take("dataset.manifest")) c.manifest_path = kv.get_string("dataset.manifest");
  if (take("dataset.n_train")) c.synth.n_train = static_cast<int>(kv.get_int("dataset.n_train"));
  if (take("dataset.n_val")) c.synth.n_val = static_cast<int>(kv.get_int("dataset.n_val"));
  if (take("dataset.n_test")) c.synth.n_test = static_cast<int>(kv.get_int("dataset.n_test"));
  if (take("dataset.n_classes")) c.synth.n_classes = static_cast<int>(kv.get_int("dataset.n_classes"));
  if (take("dataset.n_attributes")) c.synth.n_attributes = static_cast<int>(kv.get_int("dataset.n_attributes"));
  if (take("dataset.correlation")) c.synth.correlation = kv.get_double("dataset.correlation");
  if (take("dataset.image_size")) c.synth.image_size = static_cast<int>(kv.get_int("dataset.image_size"));
  if (take("dataset.noise_std")) c.synth.noise_std = kv.get_double("dataset.noise_std");
  if (take("dataset.faint_prob")) c.synth.faint_prob = kv.get_list("dataset.faint_prob");

  if (take("train.epochs")) c.train.epochs = static_cast<int>(kv.get_int("train.epochs"));
  if (take("train.batch_size")) c.train.batch_size = static_cast<int>(kv.get_int("train.batch_size"));
  if (take("train.learning_rate")) c.train.learning_rate = kv.get_double("train.learning_rate");
  if (take("train.momentum")) c.train.momentum = kv.get_double("train.momentum");
  if (take("train.weight_decay")) c.train.weight_decay = kv.get_double("train.weight_decay");
  if (take("train.schedule")) {
    auto s = kv.get_string("train.schedule");
    if (s != "cosine" && s != "constant") throw ConfigError("train.schedule must be cosine or constant");
    c.train.schedule = s == "cosine" ? LrSchedule::cosine : LrSchedule::constant;
  }
  if (take("train.select_on_val")) c.train.select_on_val = kv.get_bool("train.select_on_val");
  if (take("train.finetune")) c.finetune = kv.get_bool("train.finetune");
  if (take("train.jtt")) c.jtt = kv.get_bool("train.jtt");
  if (take("train.jtt_lambda")) c.train.upweight_factor = kv.get_double("train.jtt_lambda");
  if (take("train.jtt_id_epochs")) c.train.id_epochs = static_cast<int>(kv.get_int("train.jtt_id_epochs"));

  if (take("pipeline.clusters")) c.clusters = static_cast<int>(kv.get_int("pipeline.clusters"));
  if (take("pipeline.sample_fraction")) c.sample_fraction = kv.get_double("pipeline.sample_fraction");
  if (take("pipeline.tau")) c.tau = kv.get_double("pipeline.tau");
  if (take("pipeline.cam")) c.cam = parse_cam_choice(kv.get_string("pipeline.cam"));
  if (take("pipeline.upsample")) {
    auto s = kv.get_string("pipeline.upsample");
    if (s != "bilinear" && s != "nearest") throw ConfigError("pipeline.upsample must be bilinear or nearest");
    c.upsample = s == "bilinear" ? Upsample::bilinear : Upsample::nearest;
  }
  if (take("pipeline.max_preserve")) c.max_preserve = kv.get_double("pipeline.max_preserve");
  if (take("pipeline.gen_fraction")) c.gen_fraction = kv.get_double("pipeline.gen_fraction");
  if (take("pipeline.backend")) c.backend = kv.get_string("pipeline.backend");
  if (take("pipeline.endpoint")) c.endpoint = kv.get_string("pipeline.endpoint");
  if (take("pipeline.timeout_s")) c.timeout_s = kv.get_double("pipeline.timeout_s");
  if (take("pipeline.concurrency")) c.concurrency = static_cast<int>(kv.get_int("pipeline.concurrency"));
  if (take("pipeline.prompt_template")) c.prompt_template = kv.get_string("pipeline.prompt_template");
  if (take("pipeline.rounds")) c.rounds = static_cast<int>(kv.get_int("pipeline.rounds"));
  if (take("pipeline.overlay_count")) c.overlay_count = static_cast<int>(kv.get_int("pipeline.overlay_count"));

  if (take("run.seed")) {
    long s = kv.get_int("run.seed");
    if (s < 0) throw ConfigError("run.seed must be non-negative");
    c.seed = static_cast<std::uint64_t>(s);
  }
  if (take("run.output_dir")) c.output_dir = kv.get_string("run.output_dir");

  for (const auto& [k, v] : kv.raw())
    if (!used.count(k)) throw ConfigError(std::string(origin) + ": unknown key '" + k + "'");
  c.synth.seed = c.seed;
  c.train.seed = c.seed;
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) { return parse(read_file_text(path), path.string()); }

ProceduralOptions procedural_options(const RunConfig& cfg) {
  ProceduralOptions o;
  o.noise_std = cfg.synth.noise_std;
  o.faint_prob = cfg.synth.faint_prob;
  return o;
}

}  // namespace scgs
