#include "scgs/cluster.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>

#include <Eigen/Eigenvalues>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "scgs/error.hpp"
#include "scgs/util.hpp"

namespace scgs {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using json = nlohmann::json;

namespace {

int nearest(const VectorXd& v, const std::vector<VectorXd>& centroids) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (size_t j = 0; j < centroids.size(); ++j) {
    double d = (v - centroids[j]).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(j);
    }
  }
  return best;
}

void update_centroids(const std::vector<VectorXd>& x, const std::vector<int>& assignment,
                      std::vector<VectorXd>& centroids) {
  std::vector<long> count(centroids.size(), 0);
  for (auto& c : centroids) c.setZero();
  for (size_t i = 0; i < x.size(); ++i) {
    centroids[assignment[i]] += x[i];
    ++count[assignment[i]];
  }
  for (size_t j = 0; j < centroids.size(); ++j) centroids[j] /= static_cast<double>(count[j]);
}

// Each empty cluster takes the point farthest from its current centroid,
// drawn only from clusters that keep at least one member.
void reseed_empty(const std::vector<VectorXd>& x, std::vector<int>& assignment, std::vector<VectorXd>& centroids) {
  std::vector<long> count(centroids.size(), 0);
  for (int a : assignment) ++count[a];
  for (size_t j = 0; j < centroids.size(); ++j) {
    if (count[j] > 0) continue;
    size_t pick = x.size();
    double far = -1.0;
    for (size_t i = 0; i < x.size(); ++i) {
      if (count[assignment[i]] < 2) continue;
      double d = (x[i] - centroids[assignment[i]]).squaredNorm();
      if (d > far) {
        far = d;
        pick = i;
      }
    }
    if (pick == x.size()) throw InputError("k-means: cannot re-seed an empty cluster");
    spdlog::debug("k-means: re-seeding empty cluster {} at point {}", j, pick);
    --count[assignment[pick]];
    assignment[pick] = static_cast<int>(j);
    count[j] = 1;
    centroids[j] = x[pick];
  }
}

}  // namespace

double within_cluster_sse(const std::vector<VectorXd>& vectors, const std::vector<VectorXd>& centroids,
                          const std::vector<int>& assignment) {
  double s = 0.0;
  for (size_t i = 0; i < vectors.size(); ++i) s += (vectors[i] - centroids[assignment[i]]).squaredNorm();
  return s;
}

KMeansResult fit_kmeans(const std::vector<VectorXd>& x, int k, std::uint64_t seed, int max_iter) {
  if (k < 1) throw InputError("k-means: K must be >= 1");
  if (x.size() < static_cast<size_t>(k))
    throw InputError("k-means: " + std::to_string(x.size()) + " vectors for K=" + std::to_string(k));
  const Eigen::Index dim = x.front().size();
  for (const auto& v : x)
    if (v.size() != dim) throw InputError("k-means: vectors have different dimensions");

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  KMeansResult r;
  r.centroids.push_back(x[std::uniform_int_distribution<size_t>(0, x.size() - 1)(rng)]);
  std::vector<double> d2(x.size());
  while (r.centroids.size() < static_cast<size_t>(k)) {
    double total = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
      d2[i] = (x[i] - r.centroids[nearest(x[i], r.centroids)]).squaredNorm();
      total += d2[i];
    }
    size_t pick = x.size() - 1;
    if (total > 0.0) {
      double u = unit(rng) * total, acc = 0.0;
      for (size_t i = 0; i < x.size(); ++i) {
        acc += d2[i];
        if (u < acc && d2[i] > 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = std::uniform_int_distribution<size_t>(0, x.size() - 1)(rng);
    }
    r.centroids.push_back(x[pick]);
  }

  r.assignment.assign(x.size(), 0);
  std::vector<int> next(x.size());
  for (int it = 1; it <= max_iter; ++it) {
    for (size_t i = 0; i < x.size(); ++i) next[i] = nearest(x[i], r.centroids);
    if (it > 1 && next == r.assignment) {
      r.converged = true;
      break;
    }
    r.assignment = next;
    reseed_empty(x, r.assignment, r.centroids);
    update_centroids(x, r.assignment, r.centroids);
    r.sse_history.push_back(within_cluster_sse(x, r.centroids, r.assignment));
    r.iterations = it;
  }
  return r;
}

MatrixXd sample_covariance(const std::vector<VectorXd>& members, const VectorXd& mean) {
  if (members.size() < 2) throw InputError("sample covariance needs at least 2 members");
  MatrixXd s = MatrixXd::Zero(mean.size(), mean.size());
  for (const auto& v : members) {
    if (v.size() != mean.size()) throw InputError("covariance: dimension mismatch");
    VectorXd c = v - mean;
    s.noalias() += c * c.transpose();
  }
  s /= static_cast<double>(members.size() - 1);
  return 0.5 * (s + s.transpose());
}

double shrinkage_epsilon(const MatrixXd& cov) {
  double tr = cov.trace();
  return tr > 0.0 ? 1e-6 * tr / static_cast<double>(cov.rows()) : 1e-6;
}

MatrixXd cluster_covariance(const std::vector<VectorXd>& members, const VectorXd& mean) {
  if (members.empty()) throw InputError("covariance of an empty cluster");
  const auto d = mean.size();
  if (members.size() == 1) return 1e-6 * MatrixXd::Identity(d, d);
  MatrixXd s = sample_covariance(members, mean);
  s.diagonal().array() += shrinkage_epsilon(s);
  return s;
}

double gaussian_logpdf(const VectorXd& s, const VectorXd& mu, const MatrixXd& sigma) {
  if (s.size() != mu.size() || sigma.rows() != mu.size() || sigma.cols() != mu.size())
    throw InputError("gaussian_logpdf: dimension mismatch");
  GaussianComponent g;
  g.mean = mu;
  g.covariance = sigma;
  g.factor();
  return g.logpdf(s);
}

void GaussianComponent::factor() {
  chol.compute(covariance);
  if (chol.info() != Eigen::Success) throw InputError("covariance is not positive definite");
  logdet = 2.0 * chol.matrixLLT().diagonal().array().log().sum();
}

double GaussianComponent::logpdf(const VectorXd& s) const {
  if (s.size() != mean.size()) throw InputError("gaussian_logpdf: dimension mismatch");
  VectorXd z = chol.matrixL().solve(s - mean);
  const double d = static_cast<double>(mean.size());
  return -0.5 * (d * std::log(2.0 * std::numbers::pi) + logdet + z.squaredNorm());
}

VectorXd ClusterModel::project(std::span<const double> raw) const {
  if (static_cast<Eigen::Index>(raw.size()) != feature_mean.size()) throw InputError("feature dimension mismatch");
  Eigen::Map<const VectorXd> v(raw.data(), static_cast<Eigen::Index>(raw.size()));
  return projection * (v - feature_mean);
}

std::vector<double> ClusterModel::member_weights(int cluster) const {
  const auto& comp = components.at(static_cast<size_t>(cluster));
  std::vector<double> lw;
  for (size_t m : comp.members) lw.push_back(comp.logpdf(projected[m]));
  double mx = *std::max_element(lw.begin(), lw.end()), z = 0.0;
  for (double& w : lw) z += (w = std::exp(w - mx));
  for (double& w : lw) w /= z;
  return lw;
}

int projection_dim(size_t n_items, size_t raw_dim, int max_dim) {
  long d = std::min<long>({max_dim, static_cast<long>(n_items) - 2, static_cast<long>(raw_dim)});
  return static_cast<int>(std::max<long>(1, d));
}

ClusterModel fit_class_clusters(const MisclassifiedSet& set, int k, std::uint64_t seed, int max_dim) {
  const size_t n = set.items.size();
  if (n == 0) throw InputError("cannot cluster an empty misclassified set");
  const size_t dim = set.items.front().features.size();
  if (dim == 0) throw InputError("misclassified items carry no feature vectors");
  ClusterModel m;
  m.label = set.label;
  MatrixXd x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
  for (size_t i = 0; i < n; ++i) {
    const auto& f = set.items[i].features;
    if (f.size() != dim) throw InputError("feature vectors have different dimensions");
    x.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::RowVectorXd>(f.data(), static_cast<Eigen::Index>(dim));
    m.ids.push_back(set.items[i].image_id);
  }
  m.feature_mean = x.colwise().mean().transpose();
  const int d = projection_dim(n, dim, max_dim);
  if (n >= 2) {
    MatrixXd xc = x.rowwise() - m.feature_mean.transpose();
    MatrixXd cov = (xc.transpose() * xc) / static_cast<double>(n - 1);
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(cov);
    m.projection.resize(d, static_cast<Eigen::Index>(dim));
    for (int r = 0; r < d; ++r) {
      VectorXd v = es.eigenvectors().col(static_cast<Eigen::Index>(dim) - 1 - r);
      Eigen::Index arg;
      v.cwiseAbs().maxCoeff(&arg);
      if (v(arg) < 0) v = -v;
      m.projection.row(r) = v.transpose();
    }
  } else {
    m.projection = MatrixXd::Identity(d, static_cast<Eigen::Index>(dim));
  }
  for (size_t i = 0; i < n; ++i) m.projected.push_back(m.projection * (x.row(static_cast<Eigen::Index>(i)).transpose() - m.feature_mean));

  int k_eff = std::min<int>(k, static_cast<int>(n));
  if (k_eff < k) spdlog::warn("class {}: only {} misclassified items, using K={}", set.label, n, k_eff);
  m.k = k_eff;
  KMeansResult km = fit_kmeans(m.projected, k_eff, derive_seed(seed, static_cast<std::uint64_t>(set.label)));
  m.assignment = km.assignment;
  m.sse_history = km.sse_history;
  m.components.resize(static_cast<size_t>(k_eff));
  for (size_t i = 0; i < n; ++i) m.components[static_cast<size_t>(m.assignment[i])].members.push_back(i);
  for (int c = 0; c < k_eff; ++c) {
    auto& comp = m.components[static_cast<size_t>(c)];
    comp.mean = km.centroids[static_cast<size_t>(c)];
    std::vector<VectorXd> mem;
    for (size_t i : comp.members) mem.push_back(m.projected[i]);
    comp.covariance = cluster_covariance(mem, comp.mean);
    comp.factor();
  }
  return m;
}

std::vector<size_t> weighted_draw_without_replacement(std::span<const double> log_weights, size_t n,
                                                      std::mt19937_64& rng) {
  std::vector<size_t> remaining(log_weights.size());
  std::iota(remaining.begin(), remaining.end(), 0);
  std::vector<size_t> out;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  n = std::min(n, log_weights.size());
  std::vector<double> w;
  while (out.size() < n) {
    double mx = -std::numeric_limits<double>::infinity();
    for (size_t i : remaining) mx = std::max(mx, log_weights[i]);
    w.clear();
    double total = 0.0;
    for (size_t i : remaining) {
      w.push_back(std::isfinite(mx) ? std::exp(log_weights[i] - mx) : 1.0);
      total += w.back();
    }
    double u = unit(rng) * total, acc = 0.0;
    size_t pos = remaining.size() - 1;
    for (size_t j = 0; j < remaining.size(); ++j) {
      acc += w[j];
      if (u < acc) {
        pos = j;
        break;
      }
    }
    out.push_back(remaining[pos]);
    remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(pos));
  }
  return out;
}

std::vector<std::string> sample_cluster(const ClusterModel& model, int cluster, size_t n, std::uint64_t seed) {
  const auto& comp = model.components.at(static_cast<size_t>(cluster));
  if (n > comp.members.size()) {
    spdlog::warn("class {} cluster {}: requested {} samples from {} members, clipping", model.label, cluster, n,
                 comp.members.size());
    n = comp.members.size();
  }
  std::vector<double> lw;
  for (size_t m : comp.members) lw.push_back(comp.logpdf(model.projected[m]));
  std::mt19937_64 rng(seed);
  std::vector<std::string> ids;
  for (size_t j : weighted_draw_without_replacement(lw, n, rng)) ids.push_back(model.ids[comp.members[j]]);
  return ids;
}

std::vector<size_t> apportion(std::span<const size_t> sizes, size_t n) {
  size_t total = std::accumulate(sizes.begin(), sizes.end(), size_t{0});
  std::vector<size_t> out(sizes.size(), 0);
  if (total == 0) return out;
  n = std::min(n, total);
  std::vector<std::pair<double, size_t>> rem;
  size_t given = 0;
  for (size_t i = 0; i < sizes.size(); ++i) {
    double q = static_cast<double>(n) * static_cast<double>(sizes[i]) / static_cast<double>(total);
    out[i] = static_cast<size_t>(std::floor(q));
    given += out[i];
    rem.push_back({q - std::floor(q), i});
  }
  std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (size_t j = 0; given < n; ++j, ++given) ++out[rem[j].second];
  return out;
}

std::map<int, SamplePlan> build_sample_plan(const std::map<int, ClusterModel>& models, const HarvestResult& mis_sets,
                                            double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("sample fraction must lie in (0, 1]");
  std::map<int, SamplePlan> plans;
  for (const auto& [label, set] : mis_sets) {
    SamplePlan& p = plans[label];
    p.label = label;
    p.fraction = fraction;
    p.seed = seed;
    auto it = models.find(label);
    if (set.items.empty() || it == models.end()) continue;
    const ClusterModel& m = it->second;
    size_t n = static_cast<size_t>(std::llround(fraction * static_cast<double>(set.items.size())));
    std::vector<size_t> sizes;
    for (const auto& c : m.components) sizes.push_back(c.members.size());
    auto quota = apportion(sizes, n);
    for (int c = 0; c < m.k; ++c) {
      auto ids = sample_cluster(m, c, quota[static_cast<size_t>(c)],
                                derive_seed(seed, "class" + std::to_string(label) + "/cluster" + std::to_string(c)));
      p.ids.insert(p.ids.end(), ids.begin(), ids.end());
      p.per_cluster.push_back(std::move(ids));
    }
  }
  return plans;
}

namespace {

json vec_json(const VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

VectorXd json_vec(const json& j) {
  auto v = j.get<std::vector<double>>();
  return Eigen::Map<VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

constexpr char kCovMagic[8] = {'S', 'C', 'G', 'S', 'C', 'O', 'V', '1'};

}  // namespace

void save_cluster_models(const std::map<int, ClusterModel>& models, const std::filesystem::path& dir) {
  json classes = json::array();
  std::string cov(kCovMagic, sizeof kCovMagic);
  auto put = [&cov](const void* p, size_t n) { cov.append(static_cast<const char*>(p), n); };
  for (const auto& [label, m] : models) {
    json proj = json::array(), projected = json::array(), clusters = json::array();
    for (Eigen::Index r = 0; r < m.projection.rows(); ++r) proj.push_back(vec_json(m.projection.row(r).transpose()));
    for (const auto& p : m.projected) projected.push_back(vec_json(p));
    for (size_t c = 0; c < m.components.size(); ++c) {
      const auto& g = m.components[c];
      clusters.push_back({{"centroid", vec_json(g.mean)}, {"logdet", g.logdet}, {"size", g.members.size()}});
      std::uint32_t hdr[3] = {static_cast<std::uint32_t>(label), static_cast<std::uint32_t>(c),
                              static_cast<std::uint32_t>(g.covariance.rows())};
      put(hdr, sizeof hdr);
      Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = g.covariance;
      put(rm.data(), static_cast<size_t>(rm.size()) * sizeof(double));
    }
    json assignments = json::object();
    for (size_t i = 0; i < m.ids.size(); ++i) assignments[m.ids[i]] = m.assignment[i];
    classes.push_back({{"label", label},
                       {"k", m.k},
                       {"ids", m.ids},
                       {"assignments", assignments},
                       {"feature_mean", vec_json(m.feature_mean)},
                       {"projection", proj},
                       {"projected", projected},
                       {"clusters", clusters},
                       {"sse_history", m.sse_history}});
  }
  std::filesystem::create_directories(dir);
  write_file_atomic(dir / "clusters.json", json{{"classes", classes}}.dump(1));
  write_file_atomic(dir / "covariance.bin", cov);
}

std::map<int, ClusterModel> load_cluster_models(const std::filesystem::path& dir) {
  std::map<int, ClusterModel> out;
  json j;
  try {
    j = json::parse(read_file_text(dir / "clusters.json"));
    for (const auto& c : j.at("classes")) {
      ClusterModel m;
      m.label = c.at("label");
      m.k = c.at("k");
      m.ids = c.at("ids").get<std::vector<std::string>>();
      for (const auto& id : m.ids) m.assignment.push_back(c.at("assignments").at(id).get<int>());
      m.feature_mean = json_vec(c.at("feature_mean"));
      const auto& proj = c.at("projection");
      m.projection.resize(static_cast<Eigen::Index>(proj.size()), m.feature_mean.size());
      for (size_t r = 0; r < proj.size(); ++r) m.projection.row(static_cast<Eigen::Index>(r)) = json_vec(proj[r]).transpose();
      for (const auto& p : c.at("projected")) m.projected.push_back(json_vec(p));
      m.sse_history = c.at("sse_history").get<std::vector<double>>();
      for (const auto& g : c.at("clusters")) {
        GaussianComponent comp;
        comp.mean = json_vec(g.at("centroid"));
        m.components.push_back(std::move(comp));
      }
      for (size_t i = 0; i < m.assignment.size(); ++i) m.components.at(static_cast<size_t>(m.assignment[i])).members.push_back(i);
      out[m.label] = std::move(m);
    }
  } catch (const json::exception& e) {
    throw ParseError((dir / "clusters.json").string() + ": " + e.what());
  }
  auto bytes = read_file_bytes(dir / "covariance.bin");
  size_t pos = 0;
  auto take = [&](void* dst, size_t n) {
    if (pos + n > bytes.size()) throw IoError("covariance.bin is truncated");
    std::memcpy(dst, bytes.data() + pos, n);
    pos += n;
  };
  char magic[8];
  take(magic, sizeof magic);
  if (std::memcmp(magic, kCovMagic, sizeof magic) != 0) throw IoError("covariance.bin has a bad header");
  while (pos < bytes.size()) {
    std::uint32_t hdr[3];
    take(hdr, sizeof hdr);
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(hdr[2], hdr[2]);
    take(rm.data(), static_cast<size_t>(rm.size()) * sizeof(double));
    auto& comp = out.at(static_cast<int>(hdr[0])).components.at(hdr[1]);
    comp.covariance = rm;
    comp.factor();
  }
  return out;
}

void save_sample_plan(const std::map<int, SamplePlan>& plans, const std::filesystem::path& path) {
  std::ostringstream out;
  for (const auto& [label, p] : plans)
    for (size_t c = 0; c < p.per_cluster.size(); ++c)
      out << json{{"label", label}, {"cluster", c}, {"fraction", p.fraction}, {"seed", p.seed}, {"ids", p.per_cluster[c]}}
                 .dump()
          << '\n';
  write_file_atomic(path, out.str());
}

std::map<int, SamplePlan> load_sample_plan(const std::filesystem::path& path) {
  std::istringstream in(read_file_text(path));
  std::map<int, SamplePlan> plans;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      auto j = json::parse(line);
      int label = j.at("label");
      SamplePlan& p = plans[label];
      p.label = label;
      p.fraction = j.at("fraction");
      p.seed = j.at("seed");
      auto ids = j.at("ids").get<std::vector<std::string>>();
      p.ids.insert(p.ids.end(), ids.begin(), ids.end());
      p.per_cluster.push_back(std::move(ids));
    } catch (const json::exception& e) {
      throw ParseError(path.string() + " line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return plans;
}

}  // namespace scgs
