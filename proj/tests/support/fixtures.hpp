#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "scgs/cluster.hpp"
#include "scgs/config.hpp"
#include "scgs/dataset.hpp"
#include "scgs/image.hpp"
#include "scgs/model.hpp"

namespace fixture {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "scgs");
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

scgs::Image random_image(int h, int w, int c, std::mt19937_64& rng);
scgs::Plane random_plane(int h, int w, std::mt19937_64& rng);

/// Two conv blocks of the given widths on h x w x c input.
scgs::ArchSpec small_arch(int h, int w, int c, int n_classes, std::vector<scgs::ConvBlockSpec> blocks = {{4, 3, 1},
                                                                                                   {3, 3, 2}});

/// Small synthetic dataset for fast tests.
scgs::SynthConfig tiny_synth(std::uint64_t seed = 0, int n_train = 200, int image_size = 16);

/// Run config over tiny_synth with a short training budget.
scgs::RunConfig tiny_run(const std::filesystem::path& out, std::uint64_t seed = 0);

/// Random SPD matrix M M^T + I.
Eigen::MatrixXd random_spd(int d, std::mt19937_64& rng);
Eigen::VectorXd random_vector(int d, std::mt19937_64& rng, double scale = 1.0);

/// Single-cluster model over the given points with the given Gaussian,
/// bypassing PCA and k-means (ids are "m0", "m1", ...).
scgs::ClusterModel one_cluster_model(const std::vector<Eigen::VectorXd>& points, const Eigen::VectorXd& mean,
                                     const Eigen::MatrixXd& cov);

}  // namespace fixture
