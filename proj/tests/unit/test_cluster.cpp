#include <cmath>
#include <numbers>
#include <set>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "scgs/cluster.hpp"
#include "scgs/error.hpp"

using namespace scgs;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

std::vector<VectorXd> blobs(int per_blob, double sep, std::mt19937_64& rng) {
  std::vector<VectorXd> pts;
  for (int b = 0; b < 2; ++b)
    for (int i = 0; i < per_blob; ++i) {
      VectorXd v = fixture::random_vector(3, rng, 0.1);
      v[0] += b * sep;
      pts.push_back(v);
    }
  return pts;
}

MisclassifiedSet feature_set(int n, int dim, std::mt19937_64& rng) {
  MisclassifiedSet s;
  s.label = 1;
  for (int i = 0; i < n; ++i) {
    MisclassifiedItem it;
    it.image_id = "img" + std::to_string(1000 + i);
    it.predicted = 0;
    VectorXd v = fixture::random_vector(dim, rng);
    if (i % 2) v[0] += 6.0;
    it.features.assign(v.data(), v.data() + dim);
    s.items.push_back(it);
  }
  return s;
}

}  // namespace

TEST(Logpdf, ClosedFormValues) {
  EXPECT_NEAR(gaussian_logpdf(VectorXd::Zero(1), VectorXd::Zero(1), MatrixXd::Identity(1, 1)), -0.91893853, 1e-8);
  EXPECT_NEAR(gaussian_logpdf(VectorXd::Ones(2), VectorXd::Ones(2), MatrixXd::Identity(2, 2)), -1.83787707, 1e-8);
}

TEST(Logpdf, MatchesGaussianEliminationOracle) {
  std::mt19937_64 rng(11);
  for (int t = 0; t < 100; ++t) {
    int d = 1 + t % 5;
    MatrixXd sigma = fixture::random_spd(d, rng);
    VectorXd mu = fixture::random_vector(d, rng), s = fixture::random_vector(d, rng);
    EXPECT_LE(oracle::rel_err(gaussian_logpdf(s, mu, sigma), oracle::gaussian_logpdf(s, mu, sigma)), 1e-8);
  }
}

TEST(Logpdf, IntegratesToOne) {
  const double s1 = 1.7;
  double total = 0.0;
  const int n = 4000;
  const double h = 16.0 * s1 / n;
  MatrixXd c1(1, 1);
  c1(0, 0) = s1 * s1;
  for (int i = 0; i <= n; ++i) {
    VectorXd x(1);
    x[0] = -8 * s1 + i * h;
    total += std::exp(gaussian_logpdf(x, VectorXd::Zero(1), c1)) * h;
  }
  EXPECT_NEAR(total, 1.0, 1e-3);

  MatrixXd c2(2, 2);
  c2 << 1.0, 0.3, 0.3, 0.5;
  const int m = 400;
  const double lim = 8.0, step = 2 * lim / m;
  total = 0.0;
  for (int i = 0; i <= m; ++i)
    for (int j = 0; j <= m; ++j) {
      VectorXd x(2);
      x << -lim + i * step, -lim + j * step;
      total += std::exp(gaussian_logpdf(x, VectorXd::Zero(2), c2)) * step * step;
    }
  EXPECT_NEAR(total, 1.0, 1e-3);
}

TEST(Logpdf, DimensionMismatchRejected) {
  EXPECT_THROW(gaussian_logpdf(VectorXd::Zero(2), VectorXd::Zero(3), MatrixXd::Identity(3, 3)), InputError);
}

TEST(Covariance, TwoPointBesselCase) {
  std::vector<VectorXd> pts{VectorXd::Constant(1, 0.0), VectorXd::Constant(1, 2.0)};
  EXPECT_DOUBLE_EQ(sample_covariance(pts, VectorXd::Constant(1, 1.0))(0, 0), 2.0);
}

TEST(Covariance, MatchesDirectSummation) {
  std::mt19937_64 rng(12);
  for (int t = 0; t < 50; ++t) {
    int n = 2 + t % 6, d = 1 + t % 4;
    std::vector<VectorXd> pts;
    VectorXd mean = VectorXd::Zero(d);
    for (int i = 0; i < n; ++i) {
      pts.push_back(fixture::random_vector(d, rng));
      mean += pts.back();
    }
    mean /= n;
    MatrixXd got = sample_covariance(pts, mean), want = oracle::direct_covariance(pts, mean);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) EXPECT_NEAR(got(i, j), want(i, j), 1e-12);
    MatrixXd reg = cluster_covariance(pts, mean);
    const double eps = 1e-6 * want.trace() / d;
    for (int i = 0; i < d; ++i) EXPECT_NEAR(reg(i, i), want(i, i) + eps, 1e-12);
    EXPECT_LE((reg - reg.transpose()).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(Covariance, IdenticalVectorsRegularizeToEpsIdentity) {
  std::vector<VectorXd> pts(4, VectorXd::Constant(3, 2.5));
  MatrixXd raw = sample_covariance(pts, pts[0]);
  EXPECT_EQ(raw.cwiseAbs().maxCoeff(), 0.0);
  MatrixXd reg = cluster_covariance(pts, pts[0]);
  EXPECT_TRUE(reg.isApprox(1e-6 * MatrixXd::Identity(3, 3)));
  EXPECT_TRUE(std::isfinite(gaussian_logpdf(pts[0], pts[0], reg)));
  std::vector<VectorXd> single{VectorXd::Constant(2, 1.0)};
  EXPECT_TRUE(cluster_covariance(single, single[0]).isApprox(1e-6 * MatrixXd::Identity(2, 2)));
}

TEST(KMeans, SingleClusterIsGlobalMean) {
  std::mt19937_64 rng(13);
  auto pts = blobs(10, 3.0, rng);
  VectorXd mean = VectorXd::Zero(3);
  for (const auto& p : pts) mean += p;
  mean /= static_cast<double>(pts.size());
  auto r = fit_kmeans(pts, 1, 0);
  EXPECT_LE((r.centroids[0] - mean).norm(), 1e-9);
}

TEST(KMeans, RecoversSeparatedBlobs) {
  std::mt19937_64 rng(14);
  auto pts = blobs(20, 50.0, rng);
  auto r = fit_kmeans(pts, 2, 3);
  EXPECT_TRUE(r.converged);
  for (int i = 0; i < 20; ++i) {
    EXPECT_EQ(r.assignment[i], r.assignment[0]);
    EXPECT_EQ(r.assignment[20 + i], r.assignment[20]);
  }
  EXPECT_NE(r.assignment[0], r.assignment[20]);
}

TEST(KMeans, SseNonIncreasingAndNearestAssignment) {
  std::mt19937_64 rng(15);
  std::vector<VectorXd> pts;
  for (int i = 0; i < 60; ++i) pts.push_back(fixture::random_vector(4, rng));
  auto r = fit_kmeans(pts, 4, 7);
  for (size_t i = 1; i < r.sse_history.size(); ++i) EXPECT_LE(r.sse_history[i], r.sse_history[i - 1] + 1e-12);
  for (size_t i = 0; i < pts.size(); ++i) {
    double best = (pts[i] - r.centroids[r.assignment[i]]).squaredNorm();
    for (const auto& c : r.centroids) EXPECT_LE(best, (pts[i] - c).squaredNorm());
  }
  for (int k = 0; k < 4; ++k) {
    VectorXd m = VectorXd::Zero(4);
    int n = 0;
    for (size_t i = 0; i < pts.size(); ++i)
      if (r.assignment[i] == k) m += pts[i], ++n;
    ASSERT_GT(n, 0);
    EXPECT_LE((m / n - r.centroids[k]).norm(), 1e-9);
  }
}

TEST(KMeans, DeterministicAndRejectsTooFewPoints) {
  std::mt19937_64 rng(16);
  auto pts = blobs(8, 2.0, rng);
  EXPECT_EQ(fit_kmeans(pts, 3, 1).assignment, fit_kmeans(pts, 3, 1).assignment);
  EXPECT_THROW(fit_kmeans(std::vector<VectorXd>(2, VectorXd::Zero(2)), 3, 1), InputError);
}

TEST(Sampling, ExhaustiveReturnsAllMembers) {
  std::mt19937_64 rng(17);
  std::vector<VectorXd> pts;
  for (int i = 0; i < 6; ++i) pts.push_back(fixture::random_vector(2, rng));
  auto m = fixture::one_cluster_model(pts, VectorXd::Zero(2), MatrixXd::Identity(2, 2));
  auto ids = sample_cluster(m, 0, 6, 1);
  EXPECT_EQ(std::set<std::string>(ids.begin(), ids.end()).size(), 6u);
  EXPECT_EQ(sample_cluster(m, 0, 50, 1).size(), 6u);
}

TEST(Sampling, NeverRepeats) {
  std::mt19937_64 rng(18);
  std::vector<double> lw;
  for (int i = 0; i < 30; ++i) lw.push_back(std::normal_distribution<double>(0, 3)(rng));
  for (int t = 0; t < 50; ++t) {
    auto d = weighted_draw_without_replacement(lw, 20, rng);
    EXPECT_EQ(std::set<size_t>(d.begin(), d.end()).size(), 20u);
  }
}

TEST(Sampling, IdenticalVectorsGiveUniformFirstDraw) {
  std::vector<VectorXd> pts(5, VectorXd::Constant(2, 1.0));
  auto m = fixture::one_cluster_model(pts, VectorXd::Constant(2, 1.0), MatrixXd::Identity(2, 2));
  std::vector<long> counts(5, 0);
  for (int t = 0; t < 10000; ++t) {
    auto id = sample_cluster(m, 0, 1, static_cast<std::uint64_t>(t))[0];
    ++counts[std::stoi(id.substr(1))];
  }
  EXPECT_GT(oracle::chi_square(counts, std::vector<double>(5, 0.2)).p_value, 0.01);
}

TEST(Sampling, TwoMemberRatioFollowsDensityGap) {
  MatrixXd cov = MatrixXd::Identity(1, 1);
  std::vector<VectorXd> pts{VectorXd::Constant(1, 0.0), VectorXd::Constant(1, 1.2)};
  auto m = fixture::one_cluster_model(pts, VectorXd::Zero(1), cov);
  const double delta = oracle::gaussian_logpdf(pts[0], VectorXd::Zero(1), cov) -
                       oracle::gaussian_logpdf(pts[1], VectorXd::Zero(1), cov);
  const double p0 = std::exp(delta) / (1 + std::exp(delta));
  long first = 0;
  const int n = 10000;
  for (int t = 0; t < n; ++t) first += sample_cluster(m, 0, 1, static_cast<std::uint64_t>(t))[0] == "m0";
  EXPECT_LE(std::abs(first - n * p0), 3 * std::sqrt(n * p0 * (1 - p0)));
}

TEST(Plan, ApportionLargestRemainder) {
  std::vector<size_t> sizes{30, 10};
  EXPECT_EQ(apportion(sizes, 8), (std::vector<size_t>{6, 2}));
  std::vector<size_t> three{5, 5, 5};
  EXPECT_EQ(apportion(three, 4), (std::vector<size_t>{2, 1, 1}));
  EXPECT_EQ(apportion(three, 100), (std::vector<size_t>{5, 5, 5}));
}

TEST(Plan, FractionFormulaAndExhaustiveFraction) {
  std::mt19937_64 rng(19);
  HarvestResult sets;
  sets[0].label = 0;
  sets[1] = feature_set(50, 6, rng);
  std::map<int, ClusterModel> models{{1, fit_class_clusters(sets[1], 2, 5)}};
  auto plans = build_sample_plan(models, sets, 0.2, 9);
  EXPECT_EQ(plans.at(1).ids.size(), 10u);
  EXPECT_TRUE(plans.at(0).ids.empty());
  std::set<std::string> u(plans.at(1).ids.begin(), plans.at(1).ids.end());
  EXPECT_EQ(u.size(), 10u);
  size_t per = 0;
  for (const auto& c : plans.at(1).per_cluster) per += c.size();
  EXPECT_EQ(per, 10u);
  auto all = build_sample_plan(models, sets, 1.0, 9);
  std::set<std::string> want;
  for (const auto& it : sets[1].items) want.insert(it.image_id);
  EXPECT_EQ(std::set<std::string>(all.at(1).ids.begin(), all.at(1).ids.end()), want);
  EXPECT_THROW(build_sample_plan(models, sets, 0.0, 9), ConfigError);
}

TEST(ClassClusters, ProjectionAndComponentsAreConsistent) {
  std::mt19937_64 rng(20);
  auto set = feature_set(40, 10, rng);
  auto m = fit_class_clusters(set, 2, 3);
  EXPECT_EQ(m.dim(), projection_dim(40, 10));
  MatrixXd ppt = m.projection * m.projection.transpose();
  EXPECT_LE((ppt - MatrixXd::Identity(m.dim(), m.dim())).cwiseAbs().maxCoeff(), 1e-9);
  size_t total = 0;
  for (const auto& c : m.components) {
    total += c.members.size();
    EXPECT_LE((c.covariance - c.covariance.transpose()).cwiseAbs().maxCoeff(), 1e-9);
    auto w = m.member_weights(static_cast<int>(&c - m.components.data()));
    double s = 0.0;
    for (double x : w) s += x;
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
  EXPECT_EQ(total, 40u);
  EXPECT_EQ(projection_dim(5, 64), 3);
  EXPECT_EQ(projection_dim(100, 64), 32);
  EXPECT_EQ(projection_dim(2, 64), 1);
}

TEST(ClassClusters, FewerItemsThanClustersReducesK) {
  std::mt19937_64 rng(21);
  auto set = feature_set(3, 4, rng);
  EXPECT_EQ(fit_class_clusters(set, 4, 1).k, 3);
}

TEST(Persist, ClusterModelsAndPlansRoundTrip) {
  fixture::TempDir dir;
  std::mt19937_64 rng(22);
  HarvestResult sets;
  sets[1] = feature_set(30, 6, rng);
  std::map<int, ClusterModel> models{{1, fit_class_clusters(sets[1], 2, 5)}};
  save_cluster_models(models, dir.path());
  auto back = load_cluster_models(dir.path());
  const auto& a = models.at(1);
  const auto& b = back.at(1);
  EXPECT_EQ(a.assignment, b.assignment);
  EXPECT_EQ(a.ids, b.ids);
  for (size_t c = 0; c < a.components.size(); ++c) {
    EXPECT_EQ(a.components[c].covariance, b.components[c].covariance);
    EXPECT_NEAR(a.components[c].logdet, b.components[c].logdet, 1e-12);
  }
  auto plans = build_sample_plan(models, sets, 0.5, 3);
  save_sample_plan(plans, dir / "plan.jsonl");
  auto pb = load_sample_plan(dir / "plan.jsonl");
  EXPECT_EQ(pb.at(1).ids, plans.at(1).ids);
  EXPECT_EQ(pb.at(1).per_cluster, plans.at(1).per_cluster);
}
