#include <gtest/gtest.h>

#include "protofed/checkpoint.hpp"
#include "protofed/losses.hpp"
#include "protofed/model.hpp"
#include "test_util.hpp"

using namespace protofed;

namespace {

ModelParams small_model(std::uint64_t seed, std::vector<int> arch = {4, 2, 3}, int k = 2) {
  Rng rng(seed, 0);
  ModelParams p = init_params(rng, arch, k);
  // Nonzero biases so their gradients are exercised too.
  Rng bias_rng(seed, 1);
  for (auto& l : p.extractor) l.bias = testutil::random_vec(bias_rng, l.bias.size(), 0.3);
  p.classifier.bias = testutil::random_vec(bias_rng, p.classifier.bias.size(), 0.3);
  return p;
}

}  // namespace

TEST(InitParams, ShapesAndZeroBiases) {
  Rng rng(5, 0);
  const std::vector<int> arch{4, 8, 3};
  const ModelParams p = init_params(rng, arch, 2);
  ASSERT_EQ(p.extractor.size(), 2u);
  EXPECT_EQ(p.extractor[0].weights.rows(), 8);
  EXPECT_EQ(p.extractor[0].weights.cols(), 4);
  EXPECT_EQ(p.extractor[1].weights.rows(), 3);
  EXPECT_EQ(p.extractor[1].weights.cols(), 8);
  EXPECT_EQ(p.classifier.weights.rows(), 2);
  EXPECT_EQ(p.classifier.weights.cols(), 3);
  for (const auto& l : p.extractor) EXPECT_TRUE(l.bias.isZero(0.0));
  EXPECT_TRUE(p.classifier.bias.isZero(0.0));
  EXPECT_EQ(p.architecture(), arch);
  const double limit = std::sqrt(6.0 / 12.0);
  EXPECT_LE(p.extractor[0].weights.cwiseAbs().maxCoeff(), limit);
}

TEST(InitParams, Deterministic) {
  Rng a(5, 0), b(5, 0);
  const std::vector<int> arch{6, 5, 4};
  EXPECT_TRUE(bitwise_equal(init_params(a, arch, 3), init_params(b, arch, 3)));
}

TEST(InitParams, RejectsBadArchitecture) {
  Rng rng(1, 0);
  EXPECT_THROW(init_params(rng, std::vector<int>{}, 2), UsageError);
  EXPECT_THROW(init_params(rng, std::vector<int>{4}, 2), UsageError);
  EXPECT_THROW(init_params(rng, std::vector<int>{4, 0}, 2), UsageError);
  EXPECT_THROW(init_params(rng, std::vector<int>{4, 3}, 1), UsageError);
}

TEST(Forward, ZeroModelGivesZeros) {
  Rng rng(1, 0);
  const ModelParams p = zeros_like(init_params(rng, std::vector<int>{3, 4, 2}, 3));
  const auto t = forward(p, Vec(Vec::Ones(3)));
  EXPECT_TRUE(t.features.isZero(0.0));
  EXPECT_TRUE(t.logits.isZero(0.0));
}

TEST(Forward, IdentityExtractor) {
  Rng rng(1, 0);
  ModelParams p = init_params(rng, std::vector<int>{3, 3}, 2);
  p.extractor[0].weights.setIdentity();
  const Vec x(Eigen::Vector3d(-1.5, 0.25, 2.0));
  EXPECT_TRUE(forward(p, x).features.col(0).isApprox(x, 0.0));
}

TEST(Forward, MatchesNaiveMatmulOracle) {
  const ModelParams p = small_model(3, {5, 7, 4}, 3);
  Rng rng(8, 0);
  for (int t = 0; t < 20; ++t) {
    const Vec x = testutil::random_vec(rng, 5);
    std::vector<double> a(x.data(), x.data() + 5);
    for (std::size_t l = 0; l < p.extractor.size(); ++l) {
      const auto& L = p.extractor[l];
      std::vector<double> next(static_cast<std::size_t>(L.weights.rows()));
      for (Eigen::Index r = 0; r < L.weights.rows(); ++r) {
        double s = L.bias(r);
        for (Eigen::Index c = 0; c < L.weights.cols(); ++c) s += L.weights(r, c) * a[c];
        next[r] = (l + 1 < p.extractor.size()) ? std::max(s, 0.0) : s;
      }
      a = next;
    }
    const auto tr = forward(p, x);
    for (Eigen::Index k = 0; k < 3; ++k) {
      double z = p.classifier.bias(k);
      for (Eigen::Index c = 0; c < 4; ++c) z += p.classifier.weights(k, c) * a[c];
      EXPECT_NEAR(tr.logits(k, 0), z, 1e-12);
    }
    const auto again = forward(p, x);
    EXPECT_TRUE(again.logits == tr.logits);
  }
}

TEST(Forward, DimensionMismatchThrows) {
  const ModelParams p = small_model(1);
  EXPECT_THROW(forward(p, Vec(Vec::Ones(3))), UsageError);
}

TEST(Backward, ZeroUpstreamGivesZeroGrads) {
  const ModelParams p = small_model(2);
  const auto t = forward(p, Vec(Vec::Ones(4)));
  const auto g = backward(p, t, Mat::Zero(2, 1), Mat::Zero(3, 1));
  for (double v : flatten(g)) EXPECT_EQ(v, 0.0);
}

TEST(Backward, ShapeMismatchThrows) {
  const ModelParams p = small_model(2);
  const auto t = forward(p, Vec(Vec::Ones(4)));
  EXPECT_THROW(backward(p, t, Mat::Zero(3, 1), Mat::Zero(3, 1)), UsageError);
  EXPECT_THROW(backward(p, t, Mat::Zero(2, 1), Mat::Zero(2, 1)), UsageError);
}

TEST(Backward, FiniteDifferencesOnEveryParameter) {
  // L = CE(logits) + sum(c .* h): exercises both upstream gradient inputs.
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const ModelParams p = small_model(100 + seed);
    Rng rng(seed, 9);
    const Mat x = testutil::random_mat(rng, 4, 5);
    const auto y = testutil::random_labels(rng, 5, 2);
    const Mat c = testutil::random_mat(rng, 3, 5);
    auto loss = [&](const ModelParams& q) {
      const auto t = forward(q, x);
      return cross_entropy(t.logits, y).value + t.features.cwiseProduct(c).sum();
    };
    const auto t = forward(p, x);
    const auto g = flatten(backward(p, t, cross_entropy(t.logits, y).grad, c));
    const auto numeric = oracle::finite_diff_grad(
        [&](const std::vector<double>& v) { return loss(unflatten(v, p)); }, flatten(p), 1e-5);
    EXPECT_LT(oracle::max_relative_error(g, numeric), 1e-4) << "seed " << seed;
  }
}

TEST(Backward, BatchGradIsMeanOfPerSampleGrads) {
  const ModelParams p = small_model(4, {4, 6, 3}, 3);
  Rng rng(4, 4);
  const Mat x = testutil::random_mat(rng, 4, 8);
  const auto y = testutil::random_labels(rng, 8, 3);
  const auto t = forward(p, x);
  const auto batch = flatten(backward(p, t, cross_entropy(t.logits, y).grad, Mat::Zero(3, 8)));
  std::vector<double> mean(batch.size(), 0.0);
  for (Eigen::Index i = 0; i < 8; ++i) {
    const std::vector<int> yi{y[i]};
    const auto ti = forward(p, Vec(x.col(i)));
    const auto gi = flatten(backward(p, ti, cross_entropy(ti.logits, yi).grad, Mat::Zero(3, 1)));
    for (std::size_t j = 0; j < mean.size(); ++j) mean[j] += gi[j] / 8.0;
  }
  for (std::size_t j = 0; j < mean.size(); ++j) EXPECT_NEAR(batch[j], mean[j], 1e-12);
}

TEST(SgdStep, Examples) {
  const ModelParams p = small_model(6);
  const ModelGrads zero = zeros_like(p);
  EXPECT_TRUE(bitwise_equal(sgd_step(p, zero, 0.01, 0.0), p));
  const ModelGrads g = small_model(7);
  EXPECT_TRUE(bitwise_equal(sgd_step(p, g, 0.0, 1e-5), p));

  ModelParams scalar;
  scalar.extractor.push_back(DenseLayer{Mat::Constant(1, 1, 1.0), Vec::Constant(1, 1.0)});
  scalar.classifier = DenseLayer{Mat::Constant(1, 1, 1.0), Vec::Constant(1, 1.0)};
  ModelGrads ones = scalar;
  EXPECT_DOUBLE_EQ(sgd_step(scalar, ones, 0.1, 0.0).extractor[0].weights(0, 0), 0.9);
  const auto decayed = sgd_step(scalar, zeros_like(scalar), 0.01, 1e-5);
  EXPECT_NEAR(decayed.extractor[0].weights(0, 0), 0.9999999, 1e-15);
  EXPECT_NEAR(decayed.classifier.bias(0), 0.9999999, 1e-15);
}

TEST(Flatten, RoundTrip) {
  const ModelParams p = small_model(12, {3, 5, 4, 2}, 4);
  const auto f = flatten(p);
  EXPECT_EQ(f.size(), p.param_count());
  EXPECT_TRUE(bitwise_equal(unflatten(f, p), p));
  EXPECT_THROW(unflatten(std::vector<double>(3), p), UsageError);
}

TEST(Checkpoint, RoundTripWithPrototypes) {
  const ModelParams p = small_model(13, {5, 6, 3}, 4);
  PrototypeSet g;
  g.set(0, Vec::Constant(3, 0.5), 3);
  g.set(3, Vec::Constant(3, -1.25), 1);
  const std::string bytes = encode_checkpoint(Checkpoint{p, g});
  EXPECT_EQ(bytes.substr(0, 4), "PFLM");
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), kCheckpointVersion);
  const Checkpoint back = decode_checkpoint(bytes);
  EXPECT_TRUE(bitwise_equal(back.params, p));
  ASSERT_TRUE(back.prototypes.has_value());
  EXPECT_EQ(back.prototypes->classes(), (std::vector<int>{0, 3}));
  EXPECT_EQ(back.prototypes->at(0).support, 3u);
  EXPECT_TRUE(back.prototypes->vector(3) == g.vector(3));

  const Checkpoint no_protos = decode_checkpoint(encode_checkpoint(Checkpoint{p, std::nullopt}));
  EXPECT_FALSE(no_protos.prototypes.has_value());
}

TEST(Checkpoint, RejectsCorruptInput) {
  const ModelParams p = small_model(14);
  std::string bytes = encode_checkpoint(Checkpoint{p, std::nullopt});
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), IngestionError);
  std::string bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad), IngestionError);
  EXPECT_THROW(decode_checkpoint(bytes + "junk"), IngestionError);
}
