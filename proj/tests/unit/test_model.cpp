#include <cmath>
#include <fstream>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "scgs/error.hpp"
#include "scgs/model.hpp"
#include "scgs/util.hpp"

using namespace scgs;

namespace {

std::vector<const Image*> ptrs(const std::vector<Image>& v) {
  std::vector<const Image*> p;
  for (const auto& x : v) p.push_back(&x);
  return p;
}

}  // namespace

TEST(Build, DeterministicForSeed) {
  auto spec = ArchSpec::default_for(24, 24, 3, 2);
  Classifier a(spec, 5), b(spec, 5), c(spec, 6);
  EXPECT_TRUE(std::ranges::equal(a.parameters(), b.parameters()));
  EXPECT_FALSE(std::ranges::equal(a.parameters(), c.parameters()));
  EXPECT_EQ(a.parameter_count(), spec.parameter_count());
}

TEST(Build, CollapsingSpecRejected) {
  auto spec = fixture::small_arch(32, 32, 3, 2, {{4, 3, 64}});
  EXPECT_THROW(build_classifier(spec, 0), SpecError);
}

TEST(Build, ParameterCountFromSpec) {
  auto spec = fixture::small_arch(8, 8, 3, 2, {{4, 3, 1}, {3, 3, 2}});
  EXPECT_EQ(spec.parameter_count(), size_t{(3 * 9 * 4 + 4) + (4 * 9 * 3 + 3) + (3 * 2 + 2)});
}

TEST(Forward, DefaultSpecGivesFiniteLogits) {
  std::mt19937_64 rng(1);
  Classifier m(ArchSpec::default_for(64, 64, 3, 2), 0);
  auto logits = m.forward(fixture::random_image(64, 64, 3, rng));
  ASSERT_EQ(logits.size(), 2u);
  for (double v : logits) EXPECT_TRUE(std::isfinite(v));
}

TEST(Forward, ZeroHeadGivesEqualLogits) {
  Classifier m(fixture::small_arch(8, 8, 3, 3), 2);
  m.head_weight().setZero();
  m.head_bias().setZero();
  auto l = m.forward(Image(8, 8, 3, 0.0));
  EXPECT_EQ(l[0], l[1]);
  EXPECT_EQ(l[1], l[2]);
}

TEST(Forward, BatchOfOneEqualsSingle) {
  std::mt19937_64 rng(2);
  Classifier m(fixture::small_arch(8, 8, 3, 2), 3);
  std::vector<Image> imgs{fixture::random_image(8, 8, 3, rng), fixture::random_image(8, 8, 3, rng)};
  auto single = m.forward(imgs[0]);
  auto p = ptrs(imgs);
  Eigen::MatrixXd one = m.forward_batch(std::span(p.data(), 1));
  Eigen::MatrixXd two = m.forward_batch(p);
  for (int c = 0; c < 2; ++c) {
    EXPECT_EQ(one(c, 0), single[c]);
    EXPECT_NEAR(two(c, 0), single[c], 1e-12);
  }
}

TEST(Forward, ShapeMismatchIsInputError) {
  Classifier m(fixture::small_arch(8, 8, 3, 2), 0);
  EXPECT_THROW(m.forward(Image(8, 9, 3)), InputError);
  EXPECT_THROW(m.forward(Image(8, 8, 1)), InputError);
}

TEST(Forward, DirectionalDerivativeMatchesFiniteDifference) {
  std::mt19937_64 rng(3);
  Classifier m(fixture::small_arch(8, 8, 3, 2), 4);
  Image img = fixture::random_image(8, 8, 3, rng);
  std::vector<double> dir(m.parameter_count());
  std::normal_distribution<double> n(0.0, 1.0);
  for (double& d : dir) d = n(rng);
  std::vector<double> grad;
  std::vector<const Image*> batch{&img};
  int label = 1;
  double w = 1.0;
  m.loss_and_gradient(batch, std::span(&label, 1), std::span(&w, 1), &grad);
  double analytic = 0.0;
  for (size_t i = 0; i < dir.size(); ++i) analytic += grad[i] * dir[i];
  const std::vector<double> base(m.parameters().begin(), m.parameters().end());
  auto loss_at = [&](double t) {
    Classifier c = m;
    for (size_t i = 0; i < dir.size(); ++i) c.parameters()[i] = base[i] + t * dir[i];
    return c.loss_and_gradient(batch, std::span(&label, 1), std::span(&w, 1), nullptr);
  };
  const double h = 1e-5;
  EXPECT_LE(oracle::rel_err(analytic, (loss_at(h) - loss_at(-h)) / (2 * h)), 1e-3);
}

TEST(Predict, ArgmaxAndTies) {
  EXPECT_EQ(argmax(std::vector<double>{2.0, -1.0}), 0);
  EXPECT_EQ(argmax(std::vector<double>{1.0, 3.0, 3.0}), 1);
  EXPECT_EQ(argmax(std::vector<double>{0.5, 0.5}), 0);
}

TEST(Predict, AgreesWithForwardArgmax) {
  std::mt19937_64 rng(4);
  Classifier m(fixture::small_arch(8, 8, 3, 3), 1);
  std::vector<Image> imgs;
  for (int i = 0; i < 100; ++i) imgs.push_back(fixture::random_image(8, 8, 3, rng));
  auto p = ptrs(imgs);
  auto batch = m.predict_batch(p);
  for (int i = 0; i < 100; ++i) {
    EXPECT_EQ(m.predict(imgs[i]), argmax(m.forward(imgs[i])));
    EXPECT_EQ(batch[i], m.predict(imgs[i]));
  }
}

TEST(Features, PureAndSizedByLastWidth) {
  std::mt19937_64 rng(5);
  Classifier m(fixture::small_arch(8, 8, 3, 2), 1);
  Image img = fixture::random_image(8, 8, 3, rng);
  auto a = m.features(img);
  EXPECT_EQ(a, m.features(img));
  EXPECT_EQ(a.size(), 3u);
}

TEST(Features, BackgroundChangeMovesFeatures) {
  Classifier m(ArchSpec::default_for(16, 16, 3, 2), 1);
  Image a(16, 16, 3, 0.2), b(16, 16, 3, 0.2);
  for (int r = 0; r < 16; ++r)
    for (int c = 0; c < 16; ++c) b.at(r, c, (r + c) % 3) = 0.8;
  for (int r = 5; r < 11; ++r)
    for (int c = 5; c < 11; ++c)
      for (int ch = 0; ch < 3; ++ch) a.at(r, c, ch) = b.at(r, c, ch) = 0.95;
  auto fa = m.features(a), fb = m.features(b);
  Eigen::Map<Eigen::VectorXd> va(fa.data(), fa.size()), vb(fb.data(), fb.size());
  EXPECT_LT(va.dot(vb) / (va.norm() * vb.norm()), 1.0);
}

TEST(Probe, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(6);
  // 2-channel, 4x4 last layer
  Classifier m(fixture::small_arch(8, 8, 3, 3, {{3, 3, 1}, {2, 3, 2}}), 7);
  Image img = fixture::random_image(8, 8, 3, rng);
  for (int c = 0; c < 3; ++c) {
    ConvProbe p = m.probe(img, c);
    ASSERT_EQ(p.channels, 2);
    ASSERT_EQ(p.height, 4);
    auto score = [&](const std::vector<double>& a) { return m.logits_from_activations(a)[c]; };
    EXPECT_DOUBLE_EQ(p.score, m.forward(img)[c]);
    for (size_t i = 0; i < p.activations.size(); ++i) {
      double fd = oracle::central_difference(score, p.activations, i, 1e-3);
      EXPECT_LE(oracle::rel_err(p.score_gradient[i], fd, 1e-9), 1e-3) << "cell " << i;
    }
  }
}

TEST(Probe, ActivationsIndependentOfClass) {
  std::mt19937_64 rng(7);
  Classifier m(fixture::small_arch(8, 8, 3, 2), 1);
  Image img = fixture::random_image(8, 8, 3, rng);
  EXPECT_EQ(m.probe(img, 0).activations, m.probe(img, 1).activations);
  EXPECT_THROW(m.probe(img, 2), InputError);
}

TEST(Probe, ZeroImageZeroBiasGivesZeroActivations) {
  Classifier m(fixture::small_arch(8, 8, 3, 2), 1);
  for (size_t b = 0; b < m.spec().blocks.size(); ++b) m.conv_bias(b).setZero();
  auto p = m.probe(Image(8, 8, 3, 0.0), 0);
  for (double a : p.activations) EXPECT_EQ(a, 0.0);
}

TEST(Gradient, ParametersMatchFiniteDifferences) {
  std::mt19937_64 rng(8);
  Classifier m(fixture::small_arch(8, 8, 3, 2), 9);
  std::vector<Image> imgs{fixture::random_image(8, 8, 3, rng), fixture::random_image(8, 8, 3, rng)};
  auto batch = ptrs(imgs);
  std::vector<int> labels{0, 1};
  std::vector<double> weights{1.0, 3.0};
  std::vector<double> grad;
  m.loss_and_gradient(batch, labels, weights, &grad);
  auto loss = [&](const std::vector<double>& theta) {
    Classifier c = m;
    std::copy(theta.begin(), theta.end(), c.parameters().begin());
    return c.loss_and_gradient(batch, labels, weights, nullptr);
  };
  std::vector<double> theta(m.parameters().begin(), m.parameters().end());
  for (size_t i = 0; i < theta.size(); ++i) {
    double fd = oracle::central_difference(loss, theta, i, 1e-5);
    EXPECT_LE(oracle::rel_err(grad[i], fd, 1e-7), 1e-3) << "parameter " << i;
  }
}

TEST(Loss, SoftmaxProbabilitiesSumToOne) {
  std::mt19937_64 rng(9);
  Classifier m(fixture::small_arch(8, 8, 3, 4), 1);
  auto l = m.forward(fixture::random_image(8, 8, 3, rng));
  double mx = *std::max_element(l.begin(), l.end()), z = 0.0;
  for (double v : l) z += std::exp(v - mx);
  double total = 0.0;
  for (double v : l) total += std::exp(v - mx) / z;
  EXPECT_NEAR(total, 1.0, 1e-6);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  fixture::TempDir dir;
  std::mt19937_64 rng(10);
  Classifier m(ArchSpec::default_for(16, 16, 3, 2), 3);
  m.set_provenance("erm");
  save_checkpoint(m, dir / "m.ckpt");
  Classifier back = load_checkpoint(dir / "m.ckpt", m.spec());
  EXPECT_TRUE(std::ranges::equal(back.parameters(), m.parameters()));
  EXPECT_EQ(back.spec(), m.spec());
  EXPECT_EQ(back.provenance(), "erm");
  for (int i = 0; i < 10; ++i) {
    Image img = fixture::random_image(16, 16, 3, rng);
    EXPECT_EQ(back.forward(img), m.forward(img));
  }
}

TEST(Checkpoint, TruncatedFileRejected) {
  fixture::TempDir dir;
  Classifier m(fixture::small_arch(8, 8, 3, 2), 3);
  save_checkpoint(m, dir / "m.ckpt");
  auto bytes = read_file_bytes(dir / "m.ckpt");
  bytes.resize(bytes.size() / 2);
  write_file_atomic(dir / "t.ckpt", bytes);
  EXPECT_THROW(load_checkpoint(dir / "t.ckpt"), CheckpointError);
}

TEST(Checkpoint, WrongSpecRejected) {
  fixture::TempDir dir;
  Classifier m(fixture::small_arch(8, 8, 3, 2), 3);
  save_checkpoint(m, dir / "m.ckpt");
  EXPECT_THROW(load_checkpoint(dir / "m.ckpt", fixture::small_arch(8, 8, 3, 3)), CheckpointError);
}
