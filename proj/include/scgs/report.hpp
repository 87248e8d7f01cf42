#pragma once

#include <optional>
#include <string>
#include <vector>

#include "scgs/dataset.hpp"
#include "scgs/image.hpp"
#include "scgs/trainer.hpp"

namespace scgs {

struct AttentionSummary {
  long n = 0;
  double mean = 0.0;
  double sd = 0.0;  // sample standard deviation
  double median = 0.0;
  double min = 0.0;
  double max = 0.0;
};

AttentionSummary summarize(std::vector<double> values);

/// One trained variant (ERM, SCGS, JTT, JTT+SCGS) of a run.
struct VariantResult {
  std::string name;
  EvalReport test;
  std::optional<AttentionSummary> attention;
};

/// Worst group must be the minimum of the per-group table; throws ReportError otherwise.
void check_variant(const VariantResult& v);

/// Header `variant,avg_acc,worst_group_acc` then one row per variant.
std::string render_report_csv(const std::vector<VariantResult>& variants);

struct ReportInputs {
  std::vector<VariantResult> variants;
  GroupCounts before;  // train split of the original data
  GroupCounts after;   // train split after merging synthesized images
  std::vector<std::string> class_names;
  std::string cam_method;
  double tau = 0.0;
  long synthesized = 0;
  long failed = 0;
  std::vector<std::string> overlay_files;
};

std::string render_report_md(const ReportInputs& in);

/// Mean and sample standard deviation over seeds, per variant.
struct SeedAggregate {
  std::string name;
  int n_seeds = 0;
  double avg_mean = 0.0, avg_sd = 0.0;
  double worst_mean = 0.0, worst_sd = 0.0;
};

std::vector<SeedAggregate> aggregate_seeds(const std::vector<std::vector<VariantResult>>& per_seed);
std::string render_summary_md(const std::vector<SeedAggregate>& rows, const std::vector<std::uint64_t>& seeds);
std::string render_summary_csv(const std::vector<SeedAggregate>& rows);

/// Horizontal strip of equally sized tiles, each upscaled by `scale`
/// (nearest neighbour) and separated by a 1-tile-pixel white gap.
Image tile_row(const std::vector<Image>& tiles, int scale);

}  // namespace scgs
