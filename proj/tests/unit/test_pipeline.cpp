#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "scgs/error.hpp"
#include "scgs/pipeline.hpp"
#include "scgs/util.hpp"

using namespace scgs;
namespace fs = std::filesystem;

namespace {

std::map<std::string, std::string> artifact_sums(const RunManifest& m) {
  std::map<std::string, std::string> out;
  for (const auto& [stage, rec] : m.stages)
    for (const auto& [a, sum] : rec.artifacts) out[stage + ":" + a] = sum;
  return out;
}

}  // namespace

TEST(Stage, NamesRoundTrip) {
  for (Stage s : kStages) EXPECT_EQ(parse_stage(to_string(s)), s);
  EXPECT_EQ(to_string(Stage::data), "gen-data");
  EXPECT_THROW(parse_stage("bake"), ConfigError);
}

TEST(Pipeline, MissingUpstreamNamesEarliestStage) {
  fixture::TempDir tmp;
  Pipeline pl(fixture::tiny_run(tmp.path()));
  try {
    pl.run_stage(Stage::cam);
    FAIL() << "expected DependencyError";
  } catch (const DependencyError& e) {
    EXPECT_NE(std::string(e.what()).find("'gen-data'"), std::string::npos) << e.what();
  }
  pl.run_stage(Stage::data);
  pl.run_stage(Stage::train);
  try {
    pl.run_stage(Stage::cam);
    FAIL() << "expected DependencyError";
  } catch (const DependencyError& e) {
    EXPECT_NE(std::string(e.what()).find("'harvest'"), std::string::npos) << e.what();
  }
}

class FullRun : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    tmp_ = new fixture::TempDir("scgs_pipe");
    manifest_ = new RunManifest(run_pipeline(fixture::tiny_run(tmp_->path() / "a", 3)));
  }
  static void TearDownTestSuite() {
    delete manifest_;
    delete tmp_;
  }
  static fixture::TempDir* tmp_;
  static RunManifest* manifest_;
};
fixture::TempDir* FullRun::tmp_ = nullptr;
RunManifest* FullRun::manifest_ = nullptr;

TEST_F(FullRun, WritesEveryArtifact) {
  fs::path d = tmp_->path() / "a";
  for (const char* f : {"config.toml", "run_manifest.json", "data/manifest.jsonl", "erm/model.ckpt",
                        "harvest/misclassified.jsonl", "cluster/clusters.json", "masks", "synth/requests.jsonl",
                        "merged/manifest.jsonl", "scgs/model.ckpt", "eval/attention.json", "metrics.jsonl",
                        "report.csv", "report.md", "overlays"})
    EXPECT_TRUE(fs::exists(d / f)) << f;
  EXPECT_EQ(manifest_->stages.size(), std::size(kStages));
  auto reloaded = load_run_manifest(d);
  EXPECT_EQ(artifact_sums(reloaded), artifact_sums(*manifest_));
}

TEST_F(FullRun, RerunSkipsEveryStage) {
  Pipeline pl(RunConfig::load(tmp_->path() / "a" / "config.toml"));
  for (Stage s : kStages) EXPECT_FALSE(pl.run_stage(s)) << to_string(s);
  EXPECT_TRUE(pl.run_stage(Stage::report, true));
  EXPECT_EQ(artifact_sums(pl.manifest()), artifact_sums(*manifest_));
}

TEST_F(FullRun, StagewiseMatchesOneShot) {
  fs::path d = tmp_->path() / "b";
  Pipeline pl(fixture::tiny_run(d, 3));
  for (Stage s : kStages) EXPECT_TRUE(pl.run_stage(s)) << to_string(s);
  EXPECT_EQ(artifact_sums(pl.manifest()), artifact_sums(*manifest_));
  EXPECT_EQ(read_file_text(d / "report.md"), read_file_text(tmp_->path() / "a" / "report.md"));
}

TEST_F(FullRun, DeletedArtifactTriggersRecompute) {
  fs::path d = tmp_->path() / "c";
  fs::copy(tmp_->path() / "a", d, fs::copy_options::recursive);
  RunConfig cfg = RunConfig::load(d / "config.toml");
  cfg.output_dir = d;
  Pipeline pl(cfg);
  fs::remove_all(d / "report.csv");
  EXPECT_TRUE(pl.run_stage(Stage::report));
  EXPECT_EQ(checksum_path(d / "report.csv"), checksum_path(tmp_->path() / "a" / "report.csv"));
  // Downstream of a missing artifact refuses to run.
  fs::remove_all(d / "masks");
  EXPECT_THROW(pl.run_stage(Stage::synth), DependencyError);
  EXPECT_TRUE(pl.run_stage(Stage::cam));
  EXPECT_EQ(checksum_path(d / "masks"), checksum_path(tmp_->path() / "a" / "masks"));
}

TEST_F(FullRun, ConfigChangeInvalidatesOnlyDependents) {
  fs::path d = tmp_->path() / "e";
  fs::copy(tmp_->path() / "a", d, fs::copy_options::recursive);
  RunConfig cfg = RunConfig::load(d / "config.toml");
  cfg.output_dir = d;
  cfg.tau = 0.8;
  Pipeline pl(cfg);
  EXPECT_FALSE(pl.run_stage(Stage::harvest));
  EXPECT_FALSE(pl.run_stage(Stage::cluster));
  EXPECT_TRUE(pl.run_stage(Stage::cam));
}

TEST_F(FullRun, VariantsAndReportConsistent) {
  fs::path d = tmp_->path() / "a";
  auto vs = load_variants(d);
  ASSERT_EQ(vs.size(), 2u);
  EXPECT_EQ(vs[0].name, "ERM");
  EXPECT_EQ(vs[1].name, "SCGS");
  for (const auto& v : vs) {
    check_variant(v);
    ASSERT_TRUE(v.attention.has_value());
    EXPECT_GE(v.attention->mean, 0.0);
    EXPECT_LE(v.attention->mean, 1.0);
  }
  EXPECT_EQ(read_file_text(d / "report.csv"), render_report_csv(vs));
}

TEST(Pipeline, CamNoneTakesImg2ImgPath) {
  fixture::TempDir tmp;
  RunConfig cfg = fixture::tiny_run(tmp.path(), 5);
  cfg.cam = CamChoice::none;
  run_pipeline(cfg);
  EXPECT_EQ(read_file_text(tmp.path() / "masks/index.jsonl"), "");
  EXPECT_EQ(load_variants(tmp.path()).size(), 2u);
  EXPECT_NE(read_file_text(tmp.path() / "report.md").find("CAM: none"), std::string::npos);
}

TEST(Pipeline, ManifestMissingForEmptyDir) {
  fixture::TempDir tmp;
  EXPECT_THROW(load_variants(tmp.path()), ReportError);
}
