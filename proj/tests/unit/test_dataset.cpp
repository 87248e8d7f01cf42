#include <cmath>
#include <fstream>
#include <set>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "scgs/dataset.hpp"
#include "scgs/error.hpp"

using namespace scgs;

namespace {

LabeledImage synthetic_entry(const DatasetManifest& m, const std::string& id, int label, int attr) {
  LabeledImage e = m.entries.front();
  e.id = id;
  e.path.clear();
  e.label = label;
  e.group_attr = attr;
  e.split = Split::train;
  e.provenance = Provenance::synthesized;
  return e;
}

}  // namespace

TEST(Generate, TrainCountAndUniqueIds) {
  auto cfg = fixture::tiny_synth(1, 2000, 8);
  auto m = generate_synthetic(cfg);
  EXPECT_EQ(m.split(Split::train).size(), 2000u);
  std::set<std::string> ids;
  for (const auto& e : m.entries) ids.insert(e.id);
  EXPECT_EQ(ids.size(), m.entries.size());
  validate_manifest(m);
}

TEST(Generate, PerfectCorrelationLeavesOffDiagonalEmpty) {
  auto cfg = fixture::tiny_synth(2, 300, 8);
  cfg.correlation = 1.0;
  auto g = group_counts(generate_synthetic(cfg), Split::train);
  EXPECT_EQ(g.at(0, 1), 0);
  EXPECT_EQ(g.at(1, 0), 0);
  EXPECT_EQ(g.total(), 300);
}

TEST(Generate, CoOccurrenceWithinThreeSigmaOfRho) {
  for (double rho : {0.5, 0.8, 0.95}) {
    auto cfg = fixture::tiny_synth(3, 2000, 8);
    cfg.correlation = rho;
    auto g = group_counts(generate_synthetic(cfg), Split::train);
    for (int c = 0; c < 2; ++c) {
      const double n = static_cast<double>(g.at(c, 0) + g.at(c, 1));
      const double sd = std::sqrt(n * rho * (1 - rho));
      EXPECT_LE(std::abs(static_cast<double>(g.at(c, c)) - n * rho), 3 * sd + 1e-9) << "rho " << rho;
    }
  }
}

TEST(Generate, HalfCorrelationIsUniformPerClass) {
  auto cfg = fixture::tiny_synth(4, 2000, 8);
  cfg.correlation = 0.5;
  auto g = group_counts(generate_synthetic(cfg), Split::train);
  for (int c = 0; c < 2; ++c)
    EXPECT_GT(oracle::chi_square({g.at(c, 0), g.at(c, 1)}, {0.5, 0.5}).p_value, 0.01);
}

TEST(Generate, EvalSplitsAreBalanced) {
  auto cfg = fixture::tiny_synth(5, 100, 8);
  cfg.n_test = 400;
  cfg.n_val = 400;
  auto m = generate_synthetic(cfg);
  for (Split s : {Split::val, Split::test}) {
    auto g = group_counts(m, s);
    EXPECT_GT(oracle::chi_square(g.cells, {0.25, 0.25, 0.25, 0.25}).p_value, 0.01);
    for (int c = 0; c < 2; ++c) EXPECT_GT(oracle::chi_square({g.at(c, 0), g.at(c, 1)}, {0.5, 0.5}).p_value, 0.01);
  }
}

TEST(Generate, BitReproducible) {
  auto cfg = fixture::tiny_synth(6, 50, 12);
  EXPECT_TRUE(generate_synthetic(cfg).same_as(generate_synthetic(cfg)));
  cfg.seed = 7;
  auto other = generate_synthetic(cfg);
  cfg.seed = 6;
  EXPECT_FALSE(generate_synthetic(cfg).same_as(other));
}

TEST(Generate, ForegroundBoxesInsideImage) {
  auto m = generate_synthetic(fixture::tiny_synth(8, 50, 16));
  for (const auto& e : m.entries) {
    ASSERT_TRUE(e.fg_box.has_value());
    EXPECT_TRUE(e.fg_box->valid_within(16, 16));
  }
}

TEST(Generate, InvalidConfigRejected) {
  auto cfg = fixture::tiny_synth();
  cfg.correlation = 1.5;
  EXPECT_THROW(generate_synthetic(cfg), ConfigError);
  cfg = fixture::tiny_synth();
  cfg.n_attributes = 3;
  EXPECT_THROW(generate_synthetic(cfg), ConfigError);
  cfg = fixture::tiny_synth();
  cfg.n_train = 0;
  EXPECT_THROW(generate_synthetic(cfg), ConfigError);
}

TEST(Manifest, SaveLoadRoundTrip) {
  fixture::TempDir dir;
  auto m = generate_synthetic(fixture::tiny_synth(9, 40, 12));
  save_manifest(m, dir / "manifest.jsonl");
  auto back = load_manifest(dir / "manifest.jsonl");
  EXPECT_TRUE(back.same_as(m));
}

TEST(Manifest, MissingImageIsIoErrorNamingPath) {
  fixture::TempDir dir;
  auto m = generate_synthetic(fixture::tiny_synth(10, 20, 8));
  save_manifest(m, dir / "manifest.jsonl");
  std::filesystem::remove(dir / "images" / "train_00003.png");
  try {
    load_manifest(dir / "manifest.jsonl");
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("train_00003.png"), std::string::npos);
  }
}

TEST(Manifest, LabelOutOfRangeIsParseError) {
  fixture::TempDir dir;
  auto m = generate_synthetic(fixture::tiny_synth(11, 20, 8));
  m.entries.resize(1);
  save_manifest(m, dir / "manifest.jsonl");
  std::string text;
  {
    std::ifstream in(dir / "manifest.jsonl");
    std::string line;
    std::getline(in, line);
    text = line + "\n";
    std::getline(in, line);
    auto pos = line.find("\"label\":0");
    ASSERT_NE(pos, std::string::npos) << line;
    line.replace(pos, 9, "\"label\":7");
    text += line + "\n";
  }
  std::ofstream(dir / "manifest.jsonl") << text;
  EXPECT_THROW(load_manifest(dir / "manifest.jsonl"), ParseError);
}

TEST(Manifest, MalformedLineNamesLine) {
  fixture::TempDir dir;
  std::ofstream(dir / "m.jsonl") << "{\"class_names\":[\"a\",\"b\"],\"attribute_names\":[\"x\",\"y\"],\"seed\":0}\n{oops\n";
  try {
    load_manifest(dir / "m.jsonl");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
}

TEST(Merge, EmptyIsIdentity) {
  auto m = generate_synthetic(fixture::tiny_synth(12, 20, 8));
  EXPECT_TRUE(merge(m, {}).same_as(m));
}

TEST(Merge, CountsIncreaseExactlyAndBaseUntouched) {
  auto m = generate_synthetic(fixture::tiny_synth(13, 100, 8));
  auto before = group_counts(m, Split::train);
  std::vector<LabeledImage> syn;
  for (int i = 0; i < 100; ++i) syn.push_back(synthetic_entry(m, "syn_" + std::to_string(i), 1, 0));
  auto merged = merge(m, syn);
  EXPECT_EQ(merged.entries.size(), m.entries.size() + 100);
  for (size_t i = 0; i < m.entries.size(); ++i) EXPECT_TRUE(merged.entries[i].same_as(m.entries[i]));
  auto after = group_counts(merged, Split::train);
  EXPECT_EQ(after.at(1, 0), before.at(1, 0) + 100);
  EXPECT_EQ(after.at(0, 0), before.at(0, 0));
  EXPECT_EQ(merged.class_names, m.class_names);
}

TEST(Merge, RejectsBadSynthesizedEntries) {
  auto m = generate_synthetic(fixture::tiny_synth(14, 20, 8));
  auto e = synthetic_entry(m, "syn_x", 0, 0);
  e.split = Split::test;
  EXPECT_THROW(merge(m, std::vector{e}), MergeError);
  e = synthetic_entry(m, m.entries[0].id, 0, 0);
  EXPECT_THROW(merge(m, std::vector{e}), MergeError);
  e = synthetic_entry(m, "syn_y", 0, 0);
  e.provenance = Provenance::original;
  EXPECT_THROW(merge(m, std::vector{e}), MergeError);
}

TEST(GroupCounts, SumToSplitSizeAndMissingLabelsReported) {
  auto m = generate_synthetic(fixture::tiny_synth(15, 60, 8));
  EXPECT_EQ(group_counts(m, Split::test).total(), static_cast<long>(m.split(Split::test).size()));
  m.entries[0].group_attr.reset();
  try {
    group_counts(m, Split::train);
    FAIL() << "expected ReportError";
  } catch (const ReportError& e) {
    EXPECT_NE(std::string(e.what()).find(m.entries[0].id), std::string::npos);
  }
}

TEST(Validate, DuplicateIdsRejected) {
  auto m = generate_synthetic(fixture::tiny_synth(16, 20, 8));
  m.entries[1].id = m.entries[0].id;
  EXPECT_THROW(validate_manifest(m), InputError);
}

TEST(Scene, InferAttributeRecoversGeneratorAttribute) {
  auto m = generate_synthetic(fixture::tiny_synth(17, 200, 16));
  int correct = 0;
  for (const auto& e : m.entries) correct += scene::infer_attribute(*e.pixels, {}, 2) == *e.group_attr;
  EXPECT_EQ(correct, static_cast<int>(m.entries.size()));
}
