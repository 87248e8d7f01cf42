#include "fixtures.hpp"

#include <unistd.h>

#include <atomic>
#include <chrono>
#include <cstdlib>

#include <spdlog/spdlog.h>

namespace fixture {

namespace fs = std::filesystem;

namespace {

// Expected failures log warnings; keep test output readable unless SCGS_LOG asks otherwise.
const bool quiet_logs = [] {
  if (const char* lvl = std::getenv("SCGS_LOG"))
    spdlog::set_level(spdlog::level::from_str(lvl));
  else
    spdlog::set_level(spdlog::level::err);
  return true;
}();

}  // namespace

TempDir::TempDir(const std::string& tag) {
  static std::atomic<int> counter{0};
  auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
  path_ = fs::temp_directory_path() /
          (tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(stamp) + "_" + std::to_string(counter++));
  fs::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

scgs::Image random_image(int h, int w, int c, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  scgs::Image img(h, w, c);
  for (double& v : img.data) v = u(rng);
  return img;
}

scgs::Plane random_plane(int h, int w, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  scgs::Plane p(h, w);
  for (double& v : p.data) v = u(rng);
  return p;
}

scgs::ArchSpec small_arch(int h, int w, int c, int n_classes, std::vector<scgs::ConvBlockSpec> blocks) {
  scgs::ArchSpec s;
  s.input_height = h;
  s.input_width = w;
  s.input_channels = c;
  s.n_classes = n_classes;
  s.blocks = std::move(blocks);
  return s;
}

scgs::SynthConfig tiny_synth(std::uint64_t seed, int n_train, int image_size) {
  scgs::SynthConfig c;
  c.n_train = n_train;
  c.n_val = 80;
  c.n_test = 80;
  c.image_size = image_size;
  c.seed = seed;
  return c;
}

scgs::RunConfig tiny_run(const fs::path& out, std::uint64_t seed) {
  scgs::RunConfig c;
  c.synth = tiny_synth(seed, 240, 16);
  c.train.epochs = 2;
  c.train.id_epochs = 1;
  c.train.seed = seed;
  c.synth.seed = seed;
  c.seed = seed;
  c.sample_fraction = 0.5;
  c.gen_fraction = 0.2;
  c.overlay_count = 2;
  c.output_dir = out;
  return c;
}

Eigen::MatrixXd random_spd(int d, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::MatrixXd m(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) m(i, j) = n(rng);
  return m * m.transpose() + Eigen::MatrixXd::Identity(d, d);
}

Eigen::VectorXd random_vector(int d, std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> n(0.0, scale);
  Eigen::VectorXd v(d);
  for (int i = 0; i < d; ++i) v[i] = n(rng);
  return v;
}

scgs::ClusterModel one_cluster_model(const std::vector<Eigen::VectorXd>& points, const Eigen::VectorXd& mean,
                                     const Eigen::MatrixXd& cov) {
  scgs::ClusterModel m;
  const auto d = mean.size();
  m.k = 1;
  m.feature_mean = Eigen::VectorXd::Zero(d);
  m.projection = Eigen::MatrixXd::Identity(d, d);
  m.components.resize(1);
  m.components[0].mean = mean;
  m.components[0].covariance = cov;
  m.components[0].factor();
  for (size_t i = 0; i < points.size(); ++i) {
    m.ids.push_back("m" + std::to_string(i));
    m.projected.push_back(points[i]);
    m.assignment.push_back(0);
    m.components[0].members.push_back(i);
  }
  return m;
}

}  // namespace fixture
