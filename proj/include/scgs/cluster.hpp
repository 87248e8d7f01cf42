#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "scgs/harvest.hpp"

namespace scgs {

struct KMeansResult {
  std::vector<Eigen::VectorXd> centroids;
  std::vector<int> assignment;
  std::vector<double> sse_history;  // within-cluster SSE after each Lloyd iteration
  int iterations = 0;
  bool converged = false;
};

/// Lloyd's algorithm with k-means++ seeding. Ties go to the lowest centroid index.
KMeansResult fit_kmeans(const std::vector<Eigen::VectorXd>& vectors, int k, std::uint64_t seed, int max_iter = 300);

double within_cluster_sse(const std::vector<Eigen::VectorXd>& vectors, const std::vector<Eigen::VectorXd>& centroids,
                          const std::vector<int>& assignment);

/// Bessel-corrected sample covariance (no shrinkage). Needs at least 2 members.
Eigen::MatrixXd sample_covariance(const std::vector<Eigen::VectorXd>& members, const Eigen::VectorXd& mean);

/// eps = 1e-6 * trace / d, or 1e-6 when the trace is 0.
double shrinkage_epsilon(const Eigen::MatrixXd& cov);

/// Sample covariance plus eps*I. A singleton gets eps*I with eps = 1e-6.
Eigen::MatrixXd cluster_covariance(const std::vector<Eigen::VectorXd>& members, const Eigen::VectorXd& mean);

double gaussian_logpdf(const Eigen::VectorXd& s, const Eigen::VectorXd& mu, const Eigen::MatrixXd& sigma);

struct GaussianComponent {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;  // regularized
  Eigen::LLT<Eigen::MatrixXd> chol;
  double logdet = 0.0;
  std::vector<size_t> members;  // indices into ClusterModel::ids

  void factor();
  double logpdf(const Eigen::VectorXd& s) const;
};

struct ClusterModel {
  int label = 0;
  int k = 0;
  Eigen::VectorXd feature_mean;  // D; centring used before projection
  Eigen::MatrixXd projection;    // d x D, orthonormal rows
  std::vector<std::string> ids;  // ordered as in the misclassified set
  std::vector<Eigen::VectorXd> projected;
  std::vector<int> assignment;
  std::vector<GaussianComponent> components;
  std::vector<double> sse_history;

  int dim() const { return static_cast<int>(projection.rows()); }
  Eigen::VectorXd project(std::span<const double> raw) const;
  /// Within-cluster sampling probabilities (softmax of member log-densities).
  std::vector<double> member_weights(int cluster) const;
};

/// Projection dimension min(32, n - 2, D), at least 1.
int projection_dim(size_t n_items, size_t raw_dim, int max_dim = 32);

/// PCA projection + k-means + per-cluster Gaussians for one class.
/// K is reduced to the item count when fewer items exist.
ClusterModel fit_class_clusters(const MisclassifiedSet& set, int k, std::uint64_t seed, int max_dim = 32);

/// Draws n indices without replacement; each draw picks among the remaining
/// indices with probability proportional to exp(log_weight).
std::vector<size_t> weighted_draw_without_replacement(std::span<const double> log_weights, size_t n,
                                                      std::mt19937_64& rng);

/// Ids drawn from one cluster, in draw order. n above the cluster size is clipped.
std::vector<std::string> sample_cluster(const ClusterModel& model, int cluster, size_t n, std::uint64_t seed);

/// Largest-remainder split of n across groups proportional to sizes.
std::vector<size_t> apportion(std::span<const size_t> sizes, size_t n);

struct SamplePlan {
  int label = 0;
  double fraction = 0.0;
  std::uint64_t seed = 0;
  std::vector<std::vector<std::string>> per_cluster;
  std::vector<std::string> ids;  // union in cluster order
};

std::map<int, SamplePlan> build_sample_plan(const std::map<int, ClusterModel>& models, const HarvestResult& mis_sets,
                                            double fraction, std::uint64_t seed);

/// clusters.json plus covariance.bin ("SCGSCOV1", then per class and cluster
/// u32 label, u32 cluster, u32 d, d*d f64 row-major).
void save_cluster_models(const std::map<int, ClusterModel>& models, const std::filesystem::path& dir);
std::map<int, ClusterModel> load_cluster_models(const std::filesystem::path& dir);

void save_sample_plan(const std::map<int, SamplePlan>& plans, const std::filesystem::path& path);
std::map<int, SamplePlan> load_sample_plan(const std::filesystem::path& path);

}  // namespace scgs
