#include "scgs/report.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <fmt/format.h>

#include "scgs/error.hpp"

namespace scgs {

AttentionSummary summarize(std::vector<double> v) {
  AttentionSummary s;
  s.n = static_cast<long>(v.size());
  if (v.empty()) return s;
  double sum = 0.0;
  for (double x : v) sum += x;
  s.mean = sum / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - s.mean) * (x - s.mean);
  s.sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
  std::sort(v.begin(), v.end());
  size_t n = v.size();
  s.median = n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  s.min = v.front();
  s.max = v.back();
  return s;
}

void check_variant(const VariantResult& v) {
  if (v.test.per_group_acc.empty()) throw ReportError("variant '" + v.name + "' has no per-group accuracies");
  double mn = 1.0;
  for (const auto& [g, a] : v.test.per_group_acc) mn = std::min(mn, a);
  if (mn != v.test.worst_group_acc)
    throw ReportError(fmt::format("variant '{}': worst-group {} differs from per-group minimum {}", v.name,
                                  v.test.worst_group_acc, mn));
}

std::string render_report_csv(const std::vector<VariantResult>& variants) {
  std::string s = "variant,avg_acc,worst_group_acc\n";
  for (const auto& v : variants) {
    check_variant(v);
    s += fmt::format("{},{:.4f},{:.4f}\n", v.name, v.test.avg_acc, v.test.worst_group_acc);
  }
  return s;
}

namespace {

std::string counts_table(const GroupCounts& g, const std::vector<std::string>& class_names) {
  std::string s = "| class |";
  for (int a = 0; a < g.n_attributes; ++a) s += fmt::format(" attr {} |", a);
  s += " total |\n|---|";
  for (int a = 0; a <= g.n_attributes; ++a) s += "---|";
  s += "\n";
  for (int c = 0; c < g.n_classes; ++c) {
    long row = 0;
    s += fmt::format("| {} |", c < static_cast<int>(class_names.size()) ? class_names[c] : std::to_string(c));
    for (int a = 0; a < g.n_attributes; ++a) {
      s += fmt::format(" {} |", g.at(c, a));
      row += g.at(c, a);
    }
    s += fmt::format(" {} |\n", row);
  }
  return s;
}

}  // namespace

std::string render_report_md(const ReportInputs& in) {
  std::string s = "# SCGS run report\n\n";
  s += fmt::format("CAM: {}  \nThreshold: {}  \nSynthesized images: {} ({} failed)\n\n", in.cam_method, in.tau,
                   in.synthesized, in.failed);
  s += "## Test accuracy\n\n| variant | avg acc | worst-group acc |\n|---|---|---|\n";
  for (const auto& v : in.variants) {
    check_variant(v);
    s += fmt::format("| {} | {:.2f} | {:.2f} |\n", v.name, 100.0 * v.test.avg_acc, 100.0 * v.test.worst_group_acc);
  }
  s += "\n## Per-group test accuracy\n\n| variant | group (class, attr) | n | acc |\n|---|---|---|---|\n";
  for (const auto& v : in.variants)
    for (const auto& [g, a] : v.test.per_group_acc)
      s += fmt::format("| {} | ({}, {}) | {} | {:.2f} |\n", v.name, g.first, g.second, v.test.n_per_group.at(g),
                       100.0 * a);
  s += "\n## Train group counts before merge\n\n" + counts_table(in.before, in.class_names);
  s += "\n## Train group counts after merge\n\n" + counts_table(in.after, in.class_names);
  s += "\n## Foreground attention (test set)\n\n| variant | n | mean | sd | median | min | max |\n|---|---|---|---|---|---|---|\n";
  for (const auto& v : in.variants) {
    if (!v.attention) continue;
    const auto& a = *v.attention;
    s += fmt::format("| {} | {} | {:.4f} | {:.4f} | {:.4f} | {:.4f} | {:.4f} |\n", v.name, a.n, a.mean, a.sd, a.median,
                     a.min, a.max);
  }
  if (!in.overlay_files.empty()) {
    s += "\n## Overlays\n\nEach strip: input, ERM CAM, SCGS CAM.\n\n";
    for (const auto& f : in.overlay_files) s += fmt::format("- {}\n", f);
  }
  return s;
}

std::vector<SeedAggregate> aggregate_seeds(const std::vector<std::vector<VariantResult>>& per_seed) {
  std::vector<std::string> order;
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> vals;
  for (const auto& run : per_seed)
    for (const auto& v : run) {
      if (!vals.count(v.name)) order.push_back(v.name);
      vals[v.name].first.push_back(v.test.avg_acc);
      vals[v.name].second.push_back(v.test.worst_group_acc);
    }
  std::vector<SeedAggregate> out;
  for (const auto& name : order) {
    auto a = summarize(vals[name].first), w = summarize(vals[name].second);
    out.push_back({name, static_cast<int>(a.n), a.mean, a.sd, w.mean, w.sd});
  }
  return out;
}

std::string render_summary_md(const std::vector<SeedAggregate>& rows, const std::vector<std::uint64_t>& seeds) {
  std::string s = fmt::format("# SCGS multi-seed summary\n\nSeeds ({}): {}\n\n", seeds.size(), fmt::join(seeds, ", "));
  s += "| variant | avg acc | worst-group acc |\n|---|---|---|\n";
  for (const auto& r : rows)
    s += fmt::format("| {} | {:.2f} ± {:.2f} | {:.2f} ± {:.2f} |\n", r.name, 100 * r.avg_mean, 100 * r.avg_sd,
                     100 * r.worst_mean, 100 * r.worst_sd);
  return s;
}

std::string render_summary_csv(const std::vector<SeedAggregate>& rows) {
  std::string s = "variant,n_seeds,avg_acc_mean,avg_acc_sd,worst_group_acc_mean,worst_group_acc_sd\n";
  for (const auto& r : rows)
    s += fmt::format("{},{},{:.4f},{:.4f},{:.4f},{:.4f}\n", r.name, r.n_seeds, r.avg_mean, r.avg_sd, r.worst_mean,
                     r.worst_sd);
  return s;
}

Image tile_row(const std::vector<Image>& tiles, int scale) {
  if (tiles.empty() || scale < 1) throw InputError("tile_row needs tiles and a positive scale");
  const int h = tiles.front().height, w = tiles.front().width;
  for (const auto& t : tiles)
    if (t.height != h || t.width != w) throw InputError("tiles differ in size");
  const int n = static_cast<int>(tiles.size());
  Image out(h * scale, n * w * scale + (n - 1) * scale, 3, 1.0);
  for (int t = 0; t < n; ++t) {
    const Image& img = tiles[static_cast<size_t>(t)];
    const int off = t * (w * scale + scale);
    for (int r = 0; r < h * scale; ++r)
      for (int c = 0; c < w * scale; ++c)
        for (int k = 0; k < 3; ++k) out.at(r, off + c, k) = img.at(r / scale, c / scale, img.channels == 3 ? k : 0);
  }
  return out;
}

}  // namespace scgs
