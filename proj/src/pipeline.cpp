#include "scgs/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <random>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "scgs/cam.hpp"
#include "scgs/cluster.hpp"
#include "scgs/error.hpp"
#include "scgs/harvest.hpp"
#include "scgs/remote.hpp"
#include "scgs/util.hpp"

namespace scgs {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";

struct VariantFile {
  const char* key;
  const char* name;
};
constexpr VariantFile kVariants[] = {{"erm", "ERM"}, {"scgs", "SCGS"}, {"jtt", "JTT"}, {"jtt_scgs", "JTT+SCGS"}};

std::string rel_str(const fs::path& p) { return p.generic_string(); }

void write_metrics(const fs::path& path, const TrainResult& r) {
  std::ostringstream out;
  for (const auto& h : r.history) {
    json j{{"epoch", h.epoch}, {"loss", h.loss}};
    j["val_avg"] = h.val_avg ? json(*h.val_avg) : json(nullptr);
    j["val_worst"] = h.val_worst ? json(*h.val_worst) : json(nullptr);
    out << j.dump() << '\n';
  }
  write_file_atomic(path, out.str());
}

json train_info(const TrainResult& r) {
  return {{"selection_rule", r.selection_rule}, {"selected_epoch", r.selected_epoch}, {"initial_loss", r.initial_loss}};
}

// Re-expresses entry paths relative to a new manifest directory.
DatasetManifest rebase(DatasetManifest m, const fs::path& from_dir, const fs::path& to_dir) {
  for (auto& e : m.entries) e.path = rel_str((from_dir / e.path).lexically_normal().lexically_relative(to_dir.lexically_normal()));
  return m;
}

std::vector<std::string> ids_of(const HarvestResult& sets) {
  std::vector<std::string> out;
  for (const auto& [label, s] : sets)
    for (const auto& it : s.items) out.push_back(it.image_id);
  return out;
}

void write_ids(const fs::path& path, const std::vector<std::string>& ids) {
  std::ostringstream out;
  for (const auto& id : ids) out << json{{"id", id}}.dump() << '\n';
  write_file_atomic(path, out.str());
}

std::vector<std::string> read_ids(const fs::path& path) {
  std::istringstream in(read_file_text(path));
  std::vector<std::string> ids;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) ids.push_back(json::parse(line).at("id").get<std::string>());
  return ids;
}

json counts_json(const GroupCounts& g) {
  return {{"n_classes", g.n_classes}, {"n_attributes", g.n_attributes}, {"cells", g.cells}};
}

GroupCounts counts_from_json(const json& j) {
  GroupCounts g;
  g.n_classes = j.at("n_classes");
  g.n_attributes = j.at("n_attributes");
  g.cells = j.at("cells").get<std::vector<long>>();
  return g;
}

size_t harvest_classes(const fs::path& path) {
  std::string text = read_file_text(path);
  try {
    return json::parse(text.substr(0, text.find('\n'))).at("n_classes").get<size_t>();
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": bad header: " + e.what());
  }
}

CamMethod attention_method(const RunConfig& cfg) {
  return cfg.cam == CamChoice::gradcam ? CamMethod::gradcam : CamMethod::gradcampp;
}

}  // namespace

std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::data: return "gen-data";
    case Stage::train: return "train";
    case Stage::harvest: return "harvest";
    case Stage::cluster: return "cluster";
    case Stage::cam: return "cam";
    case Stage::synth: return "synth";
    case Stage::merge: return "merge";
    case Stage::retrain: return "retrain";
    case Stage::eval: return "eval";
    default: return "report";
  }
}

Stage parse_stage(std::string_view s) {
  for (Stage st : kStages)
    if (to_string(st) == s) return st;
  if (s == "data") return Stage::data;
  throw ConfigError("unknown stage '" + std::string(s) + "'");
}

std::string checksum_path(const fs::path& p) {
  if (fs::is_regular_file(p)) return sha256_file(p);
  if (!fs::is_directory(p)) throw IoError("no such artifact: " + p.string());
  std::vector<std::string> lines;
  for (const auto& e : fs::recursive_directory_iterator(p))
    if (e.is_regular_file()) lines.push_back(rel_str(e.path().lexically_relative(p)) + " " + sha256_file(e.path()));
  std::sort(lines.begin(), lines.end());
  std::string all;
  for (const auto& l : lines) all += l + "\n";
  return sha256_hex(all);
}

json RunManifest::to_json() const {
  json st = json::object();
  for (const auto& [name, r] : stages)
    st[name] = {{"fingerprint", r.fingerprint}, {"inputs", r.inputs}, {"artifacts", r.artifacts},
                {"seconds", r.seconds}, {"info", r.info}};
  return {{"config", config}, {"stages", st}, {"versions", versions}};
}

RunManifest RunManifest::from_json(const json& j) {
  RunManifest m;
  try {
    m.config = j.at("config");
    m.versions = j.value("versions", json::object());
    for (const auto& [name, r] : j.at("stages").items()) {
      StageRecord s;
      s.fingerprint = r.at("fingerprint");
      s.inputs = r.at("inputs").get<std::map<std::string, std::string>>();
      s.artifacts = r.at("artifacts").get<std::map<std::string, std::string>>();
      s.seconds = r.value("seconds", 0.0);
      s.info = r.value("info", json::object());
      m.stages[name] = std::move(s);
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("run manifest: ") + e.what());
  }
  return m;
}

RunManifest load_run_manifest(const fs::path& run_dir) {
  auto path = run_dir / "run_manifest.json";
  try {
    return RunManifest::from_json(json::parse(read_file_text(path)));
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

Pipeline::Pipeline(RunConfig cfg) : cfg_(std::move(cfg)), dir_(cfg_.output_dir) {
  cfg_.validate();
  cfg_.synth.seed = cfg_.seed;
  cfg_.train.seed = cfg_.seed;
  if (fs::exists(dir_ / "run_manifest.json")) manifest_ = load_run_manifest(dir_);
  manifest_.config = cfg_.to_json();
  manifest_.versions = {{"scgs", kVersion}, {"compiler", __VERSION__}, {"cplusplus", __cplusplus}};
}

std::string Pipeline::prefix() const { return round_ <= 1 ? "" : fmt::format("round{}/", round_); }

std::string Pipeline::key(Stage s) const {
  switch (s) {
    case Stage::data:
    case Stage::train:
    case Stage::eval:
    case Stage::report: return std::string(to_string(s));
    default: return prefix() + std::string(to_string(s));
  }
}

Pipeline::StageIo Pipeline::io(Stage s) const {
  const std::string P = prefix();
  const std::string prevP = round_ <= 2 ? "" : fmt::format("round{}/", round_ - 1);
  const std::string base = round_ <= 1 ? "data/manifest.jsonl" : prevP + "merged/manifest.jsonl";
  const std::string model = round_ <= 1 ? "erm/model.ckpt" : prevP + "scgs/model.ckpt";
  const std::string final_p = cfg_.rounds <= 1 ? "" : fmt::format("round{}/", cfg_.rounds);
  StageIo r;
  switch (s) {
    case Stage::data:
      if (cfg_.dataset_source == "manifest") r.inputs = {fs::absolute(cfg_.manifest_path).string()};
      r.artifacts = {"data/manifest.jsonl", "data/images"};
      r.config_keys = {"dataset.", "run.seed"};
      break;
    case Stage::train:
      r.inputs = {"data/manifest.jsonl", "data/images"};
      r.artifacts = {"erm/model.ckpt", "erm/metrics.jsonl"};
      if (cfg_.jtt)
        r.artifacts.insert(r.artifacts.end(),
                           {"jtt/id_model.ckpt", "jtt/error_set.jsonl", "jtt/model.ckpt", "jtt/metrics.jsonl"});
      r.config_keys = {"train.epochs", "train.batch_size", "train.learning_rate", "train.momentum",
                       "train.weight_decay", "train.schedule", "train.select_on_val", "train.jtt", "run.seed"};
      if (cfg_.jtt) r.config_keys.insert(r.config_keys.end(), {"train.jtt_lambda", "train.jtt_id_epochs"});
      break;
    case Stage::harvest:
      r.inputs = {"data/images", base, model};
      r.artifacts = {P + "harvest/misclassified.jsonl", P + "harvest/features.bin"};
      break;
    case Stage::cluster:
      r.inputs = {P + "harvest/misclassified.jsonl", P + "harvest/features.bin"};
      r.artifacts = {P + "cluster/clusters.json", P + "cluster/covariance.bin", P + "cluster/sample_plan.jsonl"};
      r.config_keys = {"pipeline.clusters", "pipeline.sample_fraction", "run.seed"};
      break;
    case Stage::cam:
      r.inputs = {"data/images", base, model, P + "harvest/misclassified.jsonl", P + "cluster/sample_plan.jsonl"};
      r.artifacts = {P + "masks", P + "cam_maps"};
      r.config_keys = {"pipeline.cam", "pipeline.tau", "pipeline.upsample", "pipeline.max_preserve"};
      break;
    case Stage::synth:
      r.inputs = {"data/images", base, P + "cluster/sample_plan.jsonl", P + "masks"};
      r.artifacts = {P + "synth"};
      r.config_keys = {"pipeline.cam",      "pipeline.gen_fraction", "pipeline.backend", "pipeline.endpoint",
                       "pipeline.timeout_s", "pipeline.prompt_template", "dataset.noise_std", "dataset.faint_prob",
                       "run.seed"};
      break;
    case Stage::merge:
      r.inputs = {base, P + "synth"};
      r.artifacts = {P + "merged/manifest.jsonl", P + "merged/group_counts.json"};
      break;
    case Stage::retrain:
      r.inputs = {"data/images", P + "merged/manifest.jsonl", P + "synth"};
      if (cfg_.finetune) r.inputs.push_back("erm/model.ckpt");
      if (cfg_.jtt) r.inputs.push_back("jtt/error_set.jsonl");
      r.artifacts = {P + "scgs/model.ckpt", P + "scgs/metrics.jsonl"};
      if (cfg_.jtt) r.artifacts.insert(r.artifacts.end(), {P + "jtt_scgs/model.ckpt", P + "jtt_scgs/metrics.jsonl"});
      r.config_keys = {"train.epochs",       "train.batch_size", "train.learning_rate", "train.momentum",
                       "train.weight_decay", "train.schedule",   "train.select_on_val", "train.finetune",
                       "train.jtt",          "run.seed"};
      if (cfg_.jtt) r.config_keys.insert(r.config_keys.end(), {"train.jtt_lambda", "train.jtt_id_epochs"});
      break;
    case Stage::eval:
      r.inputs = {"data/manifest.jsonl", "data/images", "erm/model.ckpt", final_p + "scgs/model.ckpt"};
      if (cfg_.jtt) r.inputs.insert(r.inputs.end(), {"jtt/model.ckpt", final_p + "jtt_scgs/model.ckpt"});
      r.artifacts = {"eval", "metrics.jsonl"};
      r.config_keys = {"pipeline.cam", "pipeline.rounds"};
      break;
    case Stage::report:
      r.inputs = {"eval", "data/images", "erm/model.ckpt", final_p + "scgs/model.ckpt",
                  final_p + "merged/group_counts.json", final_p + "synth"};
      r.artifacts = {"report.csv", "report.md", "overlays"};
      r.config_keys = {"pipeline.cam", "pipeline.tau", "pipeline.overlay_count", "pipeline.rounds", "run.seed"};
      break;
  }
  return r;
}

std::vector<Stage> Pipeline::requires_(Stage s) const {
  switch (s) {
    case Stage::data: return {};
    case Stage::train: return {Stage::data};
    case Stage::harvest: return {Stage::train};
    case Stage::cluster: return {Stage::harvest};
    case Stage::cam: return {Stage::cluster};
    case Stage::synth: return {Stage::cam};
    case Stage::merge: return {Stage::synth};
    case Stage::retrain: return {Stage::merge};
    case Stage::eval: return {Stage::retrain};
    default: return {Stage::eval};
  }
}

bool Pipeline::complete(Stage s) const {
  auto it = manifest_.stages.find(key(s));
  if (it == manifest_.stages.end()) return false;
  for (const auto& a : io(s).artifacts)
    if (!fs::exists(p(a))) return false;
  return true;
}

std::string Pipeline::fingerprint(Stage s, const StageIo& sio, std::map<std::string, std::string>& inputs) const {
  json cfg_part = json::object();
  for (const auto& [k, v] : manifest_.config.items())
    for (const auto& want : sio.config_keys)
      if (k == want || (want.back() == '.' && k.rfind(want, 0) == 0)) cfg_part[k] = v;
  for (const auto& in : sio.inputs) {
    fs::path full = fs::path(in).is_absolute() ? fs::path(in) : p(in);
    inputs[in] = checksum_path(full);
  }
  json j{{"stage", key(s)}, {"config", cfg_part}, {"inputs", inputs}};
  return sha256_hex(j.dump());
}

bool Pipeline::run_stage(Stage s, bool force) {
  // Earliest missing upstream stage, walking the chain back to data.
  std::vector<Stage> chain;
  for (std::vector<Stage> todo = requires_(s); !todo.empty();) {
    Stage d = todo.back();
    todo.pop_back();
    chain.push_back(d);
    for (Stage x : requires_(d)) todo.push_back(x);
  }
  std::sort(chain.begin(), chain.end());
  for (Stage d : chain)
    if (!complete(d))
      throw DependencyError(fmt::format("stage '{}' requires stage '{}' to have run", to_string(s), to_string(d)));

  fs::create_directories(dir_);
  if (!fs::exists(dir_ / "config.toml")) write_file_atomic(dir_ / "config.toml", cfg_.to_text());
  StageIo sio = io(s);
  std::map<std::string, std::string> inputs;
  std::string fp = fingerprint(s, sio, inputs);
  auto it = manifest_.stages.find(key(s));
  if (!force && it != manifest_.stages.end() && it->second.fingerprint == fp) {
    bool intact = true;
    for (const auto& a : sio.artifacts) {
      auto rec = it->second.artifacts.find(a);
      if (rec == it->second.artifacts.end() || !fs::exists(p(a)) || checksum_path(p(a)) != rec->second) {
        intact = false;
        break;
      }
    }
    if (intact) {
      spdlog::info("stage {}: up to date, skipped", key(s));
      return false;
    }
  }

  spdlog::info("stage {}: running", key(s));
  auto t0 = std::chrono::steady_clock::now();
  stage_info_ = json::object();
  try {
    execute(s);
  } catch (const DependencyError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(key(s), e.what());
  }
  StageRecord rec;
  rec.fingerprint = fp;
  rec.inputs = std::move(inputs);
  for (const auto& a : sio.artifacts) {
    if (!fs::exists(p(a))) throw StageError(key(s), "artifact '" + a + "' was not produced");
    rec.artifacts[a] = checksum_path(p(a));
  }
  rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  rec.info = stage_info_;
  manifest_.stages[key(s)] = std::move(rec);
  save_manifest_file();
  spdlog::info("stage {}: done in {:.1f}s", key(s), manifest_.stages[key(s)].seconds);
  return true;
}

void Pipeline::save_manifest_file() const {
  write_file_atomic(dir_ / "run_manifest.json", manifest_.to_json().dump(2) + "\n");
}

RunManifest Pipeline::run() {
  fs::create_directories(dir_);
  write_file_atomic(dir_ / "config.toml", cfg_.to_text());
  run_stage(Stage::data);
  run_stage(Stage::train);
  for (int r = 1; r <= cfg_.rounds; ++r) {
    round_ = r;
    for (Stage s : {Stage::harvest, Stage::cluster, Stage::cam, Stage::synth, Stage::merge, Stage::retrain}) run_stage(s);
  }
  round_ = cfg_.rounds;
  run_stage(Stage::eval);
  run_stage(Stage::report);
  round_ = 1;
  return manifest_;
}

void Pipeline::execute(Stage s) {
  switch (s) {
    case Stage::data: return stage_data();
    case Stage::train: return stage_train();
    case Stage::harvest: return stage_harvest();
    case Stage::cluster: return stage_cluster();
    case Stage::cam: return stage_cam();
    case Stage::synth: return stage_synth();
    case Stage::merge: return stage_merge();
    case Stage::retrain: return stage_retrain();
    case Stage::eval: return stage_eval();
    case Stage::report: return stage_report();
  }
}

void Pipeline::stage_data() {
  DatasetManifest m;
  if (cfg_.dataset_source == "synthetic") {
    m = generate_synthetic(cfg_.synth);
  } else {
    m = load_manifest(cfg_.manifest_path);
    for (auto& e : m.entries) e.path = "images/" + e.id + ".png";
  }
  fs::remove_all(p("data"));
  save_manifest(m, p("data/manifest.jsonl"));
  auto counts = group_counts(m, Split::train);
  stage_info_ = {{"n_entries", m.entries.size()}, {"train_group_counts", counts_json(counts)}};
}

void Pipeline::stage_train() {
  DatasetManifest m = load_manifest(p("data/manifest.jsonl"));
  TrainConfig tc = cfg_.train;
  tc.seed = cfg_.seed;
  TrainResult erm = train_erm(m, tc);
  fs::create_directories(p("erm"));
  erm.model.set_provenance("erm");
  save_checkpoint(erm.model, p("erm/model.ckpt"));
  write_metrics(p("erm/metrics.jsonl"), erm);
  stage_info_["erm"] = train_info(erm);
  if (!cfg_.jtt) return;

  TrainConfig idc = tc;
  idc.epochs = tc.id_epochs;
  idc.select_on_val = false;
  TrainResult id = train_erm(m, idc);
  auto errors = ids_of(harvest_misclassified(id.model, m));
  TrainConfig jc = tc;
  jc.seed = derive_seed(cfg_.seed, "jtt");
  TrainResult jtt = train_upweighted(m, errors, tc.upweight_factor, jc);
  fs::create_directories(p("jtt"));
  id.model.set_provenance("jtt-identification");
  jtt.model.set_provenance("jtt");
  save_checkpoint(id.model, p("jtt/id_model.ckpt"));
  write_ids(p("jtt/error_set.jsonl"), errors);
  save_checkpoint(jtt.model, p("jtt/model.ckpt"));
  write_metrics(p("jtt/metrics.jsonl"), jtt);
  stage_info_["jtt"] = train_info(jtt);
  stage_info_["jtt"]["error_set_size"] = errors.size();
}

void Pipeline::stage_harvest() {
  StageIo sio = io(Stage::harvest);
  DatasetManifest base = load_manifest(p(sio.inputs[1]));
  Classifier model = load_checkpoint(p(sio.inputs[2]));
  HarvestResult sets = harvest_misclassified(model, base);
  attach_features(model, base, sets);
  fs::create_directories(p(prefix() + "harvest"));
  save_harvest(sets, base.n_classes(), p(prefix() + "harvest/misclassified.jsonl"));
  save_features(sets, p(prefix() + "harvest/features.bin"));
  for (const auto& [label, s] : sets) stage_info_["misclassified"][std::to_string(label)] = s.items.size();
}

void Pipeline::stage_cluster() {
  const std::string P = prefix();
  const fs::path hpath = p(P + "harvest/misclassified.jsonl");
  HarvestResult sets = load_harvest(hpath, harvest_classes(hpath));
  load_features(p(P + "harvest/features.bin"), sets);
  std::map<int, ClusterModel> models;
  const std::string tag = fmt::format("round{}", round_);
  for (const auto& [label, set] : sets)
    if (!set.items.empty())
      models[label] = fit_class_clusters(set, cfg_.clusters, derive_seed(derive_seed(cfg_.seed, "cluster"), tag));
  auto plans = build_sample_plan(models, sets, cfg_.sample_fraction, derive_seed(derive_seed(cfg_.seed, "sample"), tag));
  fs::create_directories(p(P + "cluster"));
  save_cluster_models(models, p(P + "cluster"));
  save_sample_plan(plans, p(P + "cluster/sample_plan.jsonl"));
  for (const auto& [label, plan] : plans) stage_info_["sampled"][std::to_string(label)] = plan.ids.size();
}

void Pipeline::stage_cam() {
  const std::string P = prefix();
  StageIo sio = io(Stage::cam);
  fs::remove_all(p(P + "masks"));
  fs::remove_all(p(P + "cam_maps"));
  fs::create_directories(p(P + "masks"));
  fs::create_directories(p(P + "cam_maps"));
  std::ostringstream index;
  if (cfg_.cam == CamChoice::none) {
    write_file_atomic(p(P + "masks/index.jsonl"), "");
    write_file_atomic(p(P + "cam_maps/README"), "img2img mode: no activation maps\n");
    stage_info_["mode"] = "img2img";
    return;
  }
  DatasetManifest base = load_manifest(p(sio.inputs[1]));
  Classifier model = load_checkpoint(p(sio.inputs[2]));
  HarvestResult sets = load_harvest(p(sio.inputs[3]), harvest_classes(p(sio.inputs[3])));
  std::map<std::string, int> predicted;
  for (const auto& [label, s] : sets)
    for (const auto& it : s.items) predicted[it.image_id] = it.predicted;
  auto plans = load_sample_plan(p(sio.inputs[4]));
  const CamMethod method = cfg_.cam == CamChoice::gradcam ? CamMethod::gradcam : CamMethod::gradcampp;
  std::set<std::string> done;
  long capped = 0, emptied = 0;
  for (const auto& [label, plan] : plans)
    for (const auto& id : plan.ids) {
      if (!done.insert(id).second) continue;
      const LabeledImage* e = base.find(id);
      if (!e || !e->pixels) throw InputError("sampled image '" + id + "' missing from the manifest");
      int c = predicted.at(id);
      ActivationMap map = compute_cam(method, model, *e->pixels, c, cfg_.upsample);
      map.image_id = id;
      Mask mask = capped_mask(map, cfg_.tau, cfg_.max_preserve);
      if (mask.tau != cfg_.tau) ++capped;
      if (mask.tau != cfg_.tau && mask.preserve_fraction() == 0.0) ++emptied;
      write_mask_png(p(P + "masks/" + id + ".png"), mask);
      write_map_png(p(P + "cam_maps/" + id + ".png"), map.values);
      index << json{{"id", id}, {"target_class", c}, {"method", to_string(method)}, {"tau", cfg_.tau},
                    {"applied_tau", mask.tau}, {"preserve_fraction", mask.preserve_fraction()}}
                   .dump()
            << '\n';
    }
  write_file_atomic(p(P + "masks/index.jsonl"), index.str());
  stage_info_ = {{"masks", done.size()}, {"tau_raised", capped}, {"emptied", emptied}, {"method", to_string(method)}};
}

void Pipeline::stage_synth() {
  const std::string P = prefix();
  StageIo sio = io(Stage::synth);
  DatasetManifest base = load_manifest(p(sio.inputs[1]));
  auto plans = load_sample_plan(p(sio.inputs[2]));
  const GenMode mode = cfg_.cam == CamChoice::none ? GenMode::img2img : GenMode::inpaint;
  std::map<std::string, Mask> masks;
  if (mode == GenMode::inpaint)
    for (const auto& [label, plan] : plans)
      for (const auto& id : plan.ids) masks[id] = read_mask_png(p(P + "masks/" + id + ".png"));
  DatasetManifest original = load_manifest(p("data/manifest.jsonl"));
  GenerationBudget budget = plan_budget(original, cfg_.gen_fraction);
  RequestSet rs = build_requests(plans, masks, budget, base, derive_seed(derive_seed(cfg_.seed, "synth"), P), mode,
                                 cfg_.prompt_template);
  if (round_ > 1)
    for (auto& r : rs.requests) r.request_id = fmt::format("r{}_{}", round_, r.request_id);

  std::shared_ptr<GenerationBackend> backend = backend_;
  if (!backend) {
    if (cfg_.backend == "remote") {
      RemoteConfig rc;
      rc.endpoint = cfg_.endpoint;
      rc.timeout_s = cfg_.timeout_s;
      backend = std::make_shared<RemoteBackend>(rc);
    } else {
      backend = std::make_shared<ProceduralBackend>(procedural_options(cfg_));
    }
  }
  GenerationOutcome out = rs.requests.empty() ? GenerationOutcome{}
                                              : run_generation(rs.requests, *backend, base, cfg_.concurrency);
  fs::remove_all(p(P + "synth"));
  save_synthesized(p(P + "synth"), out, rs.requests, backend->name());
  save_requests(p(P + "synth/requests.jsonl"), rs.requests);
  std::ostringstream fails;
  for (const auto& f : out.failures)
    fails << json{{"request_id", f.request_id}, {"label", f.label}, {"error", f.message}}.dump() << '\n';
  write_file_atomic(p(P + "synth/failures.jsonl"), fails.str());
  write_file_atomic(p(P + "synth/budget.json"),
                    json{{"fraction", budget.fraction}, {"basis", budget.basis}, {"n_new", budget.n_new},
                         {"skipped_classes", rs.skipped_classes}, {"mode", to_string(mode)}}
                            .dump(1));
  stage_info_ = {{"requests", rs.requests.size()}, {"produced", out.images.size()}, {"failed", out.failures.size()},
                 {"backend", backend->name()}, {"mode", to_string(mode)}};
}

void Pipeline::stage_merge() {
  const std::string P = prefix();
  StageIo sio = io(Stage::merge);
  const fs::path base_path = p(sio.inputs[0]);
  const fs::path merged_dir = p(P + "merged");
  DatasetManifest base = rebase(load_manifest(base_path), base_path.parent_path(), merged_dir);
  auto synth = load_synthesized(p(P + "synth"));
  for (auto& e : synth) e.path = rel_str((p(P + "synth") / e.path).lexically_normal().lexically_relative(merged_dir));
  DatasetManifest merged = merge(base, synth);
  fs::create_directories(merged_dir);
  save_manifest(merged, merged_dir / "manifest.jsonl", false);
  auto before = group_counts(load_manifest(p("data/manifest.jsonl")), Split::train);
  GroupCounts after;
  after.n_classes = before.n_classes;
  after.n_attributes = before.n_attributes;
  after.cells = before.cells;
  // Synthesized images are grouped by the attribute the backend inferred, when known.
  for (const auto& e : merged.entries)
    if (e.provenance == Provenance::synthesized && e.group_attr)
      ++after.cells[static_cast<size_t>(e.label) * after.n_attributes + *e.group_attr];
  write_file_atomic(merged_dir / "group_counts.json",
                    json{{"before", counts_json(before)}, {"after", counts_json(after)},
                         {"synthesized", synth.size()}}.dump(1));
  stage_info_ = {{"entries", merged.entries.size()}, {"synthesized", synth.size()}};
}

void Pipeline::stage_retrain() {
  const std::string P = prefix();
  DatasetManifest merged = load_manifest(p(P + "merged/manifest.jsonl"));
  TrainConfig tc = cfg_.train;
  tc.seed = derive_seed(cfg_.seed, "retrain");
  std::optional<Classifier> init;
  if (cfg_.finetune) init = load_checkpoint(p("erm/model.ckpt"));
  TrainResult r = train_erm(merged, tc, init ? &*init : nullptr);
  fs::create_directories(p(P + "scgs"));
  r.model.set_provenance("scgs");
  save_checkpoint(r.model, p(P + "scgs/model.ckpt"));
  write_metrics(p(P + "scgs/metrics.jsonl"), r);
  stage_info_["scgs"] = train_info(r);
  if (!cfg_.jtt) return;
  auto errors = read_ids(p("jtt/error_set.jsonl"));
  TrainConfig jc = cfg_.train;
  jc.seed = derive_seed(cfg_.seed, "jtt");
  TrainResult j = train_upweighted(merged, errors, cfg_.train.upweight_factor, jc);
  fs::create_directories(p(P + "jtt_scgs"));
  j.model.set_provenance("jtt+scgs");
  save_checkpoint(j.model, p(P + "jtt_scgs/model.ckpt"));
  write_metrics(p(P + "jtt_scgs/metrics.jsonl"), j);
  stage_info_["jtt_scgs"] = train_info(j);
}

void Pipeline::stage_eval() {
  const std::string final_p = cfg_.rounds <= 1 ? "" : fmt::format("round{}/", cfg_.rounds);
  DatasetManifest data = load_manifest(p("data/manifest.jsonl"));
  const CamMethod method = attention_method(cfg_);
  fs::remove_all(p("eval"));
  fs::create_directories(p("eval"));
  std::ostringstream metrics;
  json attention = json::object();
  for (const auto& v : kVariants) {
    std::string dir = std::string(v.key) == "erm" || std::string(v.key) == "jtt" ? "" : final_p;
    fs::path ckpt = p(dir + v.key + "/model.ckpt");
    if (!fs::exists(ckpt)) continue;
    Classifier model = load_checkpoint(ckpt);
    EvalReport rep = evaluate(model, data, Split::test);
    write_file_atomic(p(std::string("eval/") + v.key + ".json"), rep.to_json().dump(1));
    std::vector<double> att;
    for (const auto* e : data.split(Split::test)) {
      if (!e->fg_box) continue;
      int pred = model.predict(*e->pixels);
      att.push_back(foreground_attention(compute_cam(method, model, *e->pixels, pred).values, *e->fg_box));
    }
    AttentionSummary a = summarize(att);
    attention[v.key] = {{"method", to_string(method)}, {"n", a.n},        {"mean", a.mean}, {"sd", a.sd},
                        {"median", a.median},           {"min", a.min}, {"max", a.max}};
    std::istringstream hist(read_file_text(p(dir + v.key + "/metrics.jsonl")));
    for (std::string line; std::getline(hist, line);) {
      if (line.empty()) continue;
      json j = json::parse(line);
      j["model"] = v.key;
      metrics << j.dump() << '\n';
    }
    metrics << json{{"model", v.key}, {"split", "test"}, {"avg_acc", rep.avg_acc},
                    {"worst_group_acc", rep.worst_group_acc}, {"foreground_attention", a.mean}}
                   .dump()
            << '\n';
    stage_info_[v.key] = {{"avg_acc", rep.avg_acc}, {"worst_group_acc", rep.worst_group_acc}, {"attention", a.mean}};
  }
  write_file_atomic(p("eval/attention.json"), attention.dump(1));
  write_file_atomic(p("metrics.jsonl"), metrics.str());
}

std::vector<VariantResult> load_variants(const fs::path& run_dir) {
  std::vector<VariantResult> out;
  if (!fs::exists(run_dir / "eval/attention.json")) throw ReportError("missing eval artifacts in " + run_dir.string());
  json att = json::parse(read_file_text(run_dir / "eval/attention.json"));
  for (const auto& v : kVariants) {
    fs::path f = run_dir / "eval" / (std::string(v.key) + ".json");
    if (!fs::exists(f)) continue;
    VariantResult r;
    r.name = v.name;
    r.test = EvalReport::from_json(json::parse(read_file_text(f)));
    if (att.contains(v.key)) {
      const auto& a = att[v.key];
      r.attention = AttentionSummary{a.at("n"), a.at("mean"), a.at("sd"), a.at("median"), a.at("min"), a.at("max")};
    }
    out.push_back(std::move(r));
  }
  if (out.empty()) throw ReportError("no evaluated variants in " + run_dir.string());
  return out;
}

void Pipeline::stage_report() {
  const std::string final_p = cfg_.rounds <= 1 ? "" : fmt::format("round{}/", cfg_.rounds);
  ReportInputs in;
  in.variants = load_variants(dir_);
  DatasetManifest data = load_manifest(p("data/manifest.jsonl"));
  json counts = json::parse(read_file_text(p(final_p + "merged/group_counts.json")));
  in.before = counts_from_json(counts.at("before"));
  in.after = counts_from_json(counts.at("after"));
  in.class_names = data.class_names;
  in.cam_method = std::string(to_string(cfg_.cam));
  in.tau = cfg_.tau;
  in.synthesized = counts.at("synthesized");
  std::istringstream fails(read_file_text(p(final_p + "synth/failures.jsonl")));
  for (std::string line; std::getline(fails, line);)
    if (!line.empty()) ++in.failed;

  fs::remove_all(p("overlays"));
  fs::create_directories(p("overlays"));
  Classifier erm = load_checkpoint(p("erm/model.ckpt"));
  Classifier scgs = load_checkpoint(p(final_p + "scgs/model.ckpt"));
  auto test = data.split(Split::test);
  std::mt19937_64 rng(derive_seed(cfg_.seed, "overlays"));
  std::shuffle(test.begin(), test.end(), rng);
  const CamMethod method = attention_method(cfg_);
  for (int i = 0; i < cfg_.overlay_count && i < static_cast<int>(test.size()); ++i) {
    const LabeledImage& e = *test[static_cast<size_t>(i)];
    const Image& img = *e.pixels;
    Image a = render_overlay(img, compute_cam(method, erm, img, erm.predict(img)).values);
    Image b = render_overlay(img, compute_cam(method, scgs, img, scgs.predict(img)).values);
    std::string name = "overlays/" + e.id + ".png";
    write_png(p(name), tile_row({img, a, b}, 4));
    in.overlay_files.push_back(name);
  }
  write_file_atomic(p("report.csv"), render_report_csv(in.variants));
  write_file_atomic(p("report.md"), render_report_md(in));
}

RunManifest run_pipeline(const RunConfig& cfg) {
  Pipeline pl(cfg);
  return pl.run();
}

}  // namespace scgs
