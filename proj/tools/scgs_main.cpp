// scgs command-line driver: one subcommand per pipeline stage plus `run`.
#include <cstdlib>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "scgs/error.hpp"
#include "scgs/pipeline.hpp"
#include "scgs/report.hpp"
#include "scgs/util.hpp"

namespace fs = std::filesystem;
using namespace scgs;

namespace {

struct Flags {
  std::string config;
  std::string out;
  std::string seed;
  std::optional<double> tau;
  std::string cam;
  std::string backend;
  std::string endpoint;
  std::optional<int> rounds;
  std::optional<int> concurrency;
  bool force = false;
};

std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> out;
  std::stringstream in(s);
  for (std::string tok; std::getline(in, tok, ',');) {
    try {
      size_t used = 0;
      long long v = std::stoll(tok, &used);
      if (used != tok.size() || v < 0) throw std::invalid_argument(tok);
      out.push_back(static_cast<std::uint64_t>(v));
    } catch (const std::exception&) {
      throw ConfigError("--seed expects non-negative integers, got '" + tok + "'");
    }
  }
  if (out.empty()) throw ConfigError("--seed is empty");
  return out;
}

RunConfig resolve(const Flags& f) {
  RunConfig cfg;
  if (!f.config.empty()) {
    cfg = RunConfig::load(f.config);
  } else if (!f.out.empty() && fs::exists(fs::path(f.out) / "config.toml")) {
    cfg = RunConfig::load(fs::path(f.out) / "config.toml");
  }
  if (!f.out.empty()) cfg.output_dir = f.out;
  if (f.tau) cfg.tau = *f.tau;
  if (!f.cam.empty()) cfg.cam = parse_cam_choice(f.cam);
  if (!f.backend.empty()) cfg.backend = f.backend;
  if (!f.endpoint.empty()) cfg.endpoint = f.endpoint;
  if (cfg.endpoint.empty())
    if (const char* env = std::getenv("SCGS_ENDPOINT")) cfg.endpoint = env;
  if (f.rounds) cfg.rounds = *f.rounds;
  if (f.concurrency) cfg.concurrency = *f.concurrency;
  return cfg;
}

void copy_input_config(const Flags& f, const fs::path& dir) {
  if (f.config.empty()) return;
  fs::create_directories(dir);
  write_file_atomic(dir / "config.input.toml", read_file_text(f.config));
}

int run_all(const Flags& f) {
  RunConfig base = resolve(f);
  std::vector<std::uint64_t> seeds = f.seed.empty() ? std::vector<std::uint64_t>{base.seed} : parse_seeds(f.seed);
  if (seeds.size() == 1) {
    base.seed = seeds[0];
    copy_input_config(f, base.output_dir);
    Pipeline(base).run();
    std::cout << read_file_text(base.output_dir / "report.md");
    return 0;
  }
  std::vector<std::vector<VariantResult>> per_seed;
  for (auto s : seeds) {
    RunConfig c = base;
    c.seed = s;
    c.output_dir = base.output_dir / ("seed_" + std::to_string(s));
    copy_input_config(f, c.output_dir);
    Pipeline(c).run();
    per_seed.push_back(load_variants(c.output_dir));
  }
  auto rows = aggregate_seeds(per_seed);
  write_file_atomic(base.output_dir / "summary.csv", render_summary_csv(rows));
  std::string md = render_summary_md(rows, seeds);
  write_file_atomic(base.output_dir / "summary.md", md);
  std::cout << md;
  return 0;
}

int run_one(Stage s, const Flags& f) {
  RunConfig cfg = resolve(f);
  if (f.out.empty() && f.config.empty()) throw ConfigError("stage subcommands need --out or --config");
  if (!f.seed.empty()) {
    auto seeds = parse_seeds(f.seed);
    if (seeds.size() != 1) throw ConfigError("stage subcommands take a single --seed");
    cfg.seed = seeds[0];
  }
  copy_input_config(f, cfg.output_dir);
  Pipeline pl(cfg);
  if (s == Stage::harvest || s == Stage::cluster || s == Stage::cam || s == Stage::synth || s == Stage::merge ||
      s == Stage::retrain) {
    bool ran = false;
    for (int r = 1; r <= cfg.rounds; ++r) {
      pl.set_round(r);
      ran = pl.run_stage(s, f.force) || ran;
    }
    std::cout << to_string(s) << (ran ? ": done\n" : ": up to date\n");
  } else {
    bool ran = pl.run_stage(s, f.force);
    std::cout << to_string(s) << (ran ? ": done\n" : ": up to date\n");
  }
  return 0;
}

void add_flags(CLI::App* app, Flags& f, bool stage) {
  app->add_option("--config", f.config, "Run configuration file (flat key = value format)")->check(CLI::ExistingFile);
  app->add_option("--out", f.out, "Run directory (overrides run.output_dir)");
  app->add_option("--seed", f.seed, stage ? "Seed" : "Seed or comma-separated seed list");
  app->add_option("--tau", f.tau, "CAM threshold in (0, 1]");
  app->add_option("--cam", f.cam, "CAM method")->check(CLI::IsMember({"gradcam", "gradcampp", "none"}));
  app->add_option("--backend", f.backend, "Generation backend")->check(CLI::IsMember({"procedural", "remote"}));
  app->add_option("--endpoint", f.endpoint, "Remote inpainting endpoint (default: $SCGS_ENDPOINT)");
  app->add_option("--rounds", f.rounds, "SCGS rounds")->check(CLI::PositiveNumber);
  app->add_option("--concurrency", f.concurrency, "Generation requests in flight")->check(CLI::PositiveNumber);
  if (stage) app->add_flag("--force", f.force, "Run even when the stage is up to date");
}

}  // namespace

int main(int argc, char** argv) {
  if (const char* lvl = std::getenv("SCGS_LOG")) spdlog::set_level(spdlog::level::from_str(lvl));

  CLI::App app{"Synthesize minority-group training images from a classifier's mistakes and retrain.\n"
               "Stages: gen-data train harvest cluster cam synth merge retrain eval report; `run` does all."};
  app.require_subcommand(1);
  Flags flags;
  std::vector<std::pair<CLI::App*, Stage>> stage_cmds;
  for (Stage s : kStages) {
    auto* sub = app.add_subcommand(std::string(to_string(s)), "Run the " + std::string(to_string(s)) + " stage");
    add_flags(sub, flags, true);
    stage_cmds.emplace_back(sub, s);
  }
  auto* run = app.add_subcommand("run", "Run every stage (resuming finished ones)");
  add_flags(run, flags, false);

  CLI11_PARSE(app, argc, argv);
  try {
    if (run->parsed()) return run_all(flags);
    for (auto& [sub, s] : stage_cmds)
      if (sub->parsed()) return run_one(s, flags);
  } catch (const DependencyError& e) {
    std::cerr << "dependency error: " << e.what() << '\n';
    return 3;
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return 2;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
