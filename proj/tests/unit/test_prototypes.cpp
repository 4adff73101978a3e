#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "protofed/prototypes.hpp"
#include "test_util.hpp"

using namespace protofed;

namespace {

Vec v2(double a, double b) { return Eigen::Vector2d(a, b); }

PrototypeSet single(int k, const Vec& v, std::size_t support = 1) {
  PrototypeSet s;
  s.set(k, v, support);
  return s;
}

void expect_near(const Vec& a, const Vec& b, double tol) {
  ASSERT_EQ(a.size(), b.size());
  for (Eigen::Index i = 0; i < a.size(); ++i) EXPECT_NEAR(a(i), b(i), tol) << "index " << i;
}

}  // namespace

TEST(PrototypeSet, Invariants) {
  PrototypeSet s;
  EXPECT_TRUE(s.empty());
  EXPECT_EQ(s.dim(), 0);
  s.set(2, v2(1, 2), 3);
  EXPECT_EQ(s.dim(), 2);
  EXPECT_THROW(s.set(1, Vec::Zero(3), 1), UsageError);
  EXPECT_THROW(s.set(1, v2(0, 0), 0), UsageError);
  EXPECT_THROW(s.set(1, v2(std::nan(""), 0), 1), UsageError);
  EXPECT_THROW(s.at(7), UsageError);
  EXPECT_FALSE(s.contains(1));
}

TEST(LocalPrototypes, Examples) {
  const Mat one = v2(0.5, -1.0);
  const std::vector<int> y1{4};
  const auto a = local_prototypes(one, y1);
  EXPECT_TRUE(a.vector(4) == one.col(0));
  EXPECT_EQ(a.at(4).support, 1u);

  Mat two(2, 2);
  two << 0, 2, 0, 2;
  const std::vector<int> y2{0, 0};
  const auto b = local_prototypes(two, y2);
  EXPECT_TRUE(b.vector(0) == v2(1, 1));
  EXPECT_EQ(b.at(0).support, 2u);

  EXPECT_THROW(local_prototypes(Mat(2, 0), std::vector<int>{}), UsageError);
}

TEST(LocalPrototypes, MatchesGroupByOracle) {
  Rng rng(21, 0);
  const Mat h = testutil::random_mat(rng, 6, 50);
  const auto y = testutil::random_labels(rng, 50, 3);
  const auto got = local_prototypes(h, y);
  for (int k = 0; k < 3; ++k) {
    std::vector<double> sum(6, 0.0);
    int n = 0;
    for (int i = 0; i < 50; ++i) {
      if (y[i] != k) continue;
      ++n;
      for (int r = 0; r < 6; ++r) sum[r] += h(r, i);
    }
    if (n == 0) {
      EXPECT_FALSE(got.contains(k));
      continue;
    }
    EXPECT_EQ(got.at(k).support, static_cast<std::size_t>(n));
    for (int r = 0; r < 6; ++r) EXPECT_NEAR(got.vector(k)(r), sum[r] / n, 1e-12);
  }
}

TEST(Mixup, FeatureExamples) {
  EXPECT_TRUE(mixup_feature(v2(2, 0), v2(0, 2), 1.0) == v2(2, 0));
  EXPECT_TRUE(mixup_feature(v2(2, 0), v2(0, 2), 0.0) == v2(0, 2));
  expect_near(mixup_feature(v2(2, 0), v2(0, 2), 0.25), v2(0.5, 1.5), 1e-15);
  EXPECT_THROW(mixup_feature(v2(1, 0), Vec::Zero(3), 0.5), UsageError);
}

TEST(Mixup, SingleClassPoolFallsBackToLocal) {
  Rng data(3, 0);
  const Mat h = testutil::random_mat(data, 4, 7);
  const std::vector<int> y(7, 2);
  Rng rng(9, 9);
  const auto aug = augmented_prototypes(h, y, rng, 0.4);
  EXPECT_TRUE(aug.vector(2) == local_prototypes(h, y).vector(2));
}

TEST(Mixup, GammaOneEqualsLocal) {
  Rng data(4, 0);
  const Mat h = testutil::random_mat(data, 3, 12);
  const auto y = testutil::random_labels(data, 12, 3);
  Rng rng(1, 1);
  const auto aug = augmented_prototypes(h, y, rng, 0.4, 1.0);
  const auto loc = local_prototypes(h, y);
  for (int k : loc.classes()) expect_near(aug.vector(k), loc.vector(k), 1e-15);
}

TEST(Mixup, MatchesReplayOracle) {
  Rng data(5, 0);
  const Mat h = testutil::random_mat(data, 3, 10);
  const std::vector<int> y{0, 1, 0, 1, 1, 0, 0, 1, 0, 1};
  const double alpha = 0.4;

  Rng rng(77, 3);
  const auto got = augmented_prototypes(h, y, rng, alpha);

  // Replay: gamma first, then the partner index among other-class columns.
  Rng replay(77, 3);
  std::map<int, std::vector<double>> sum;
  std::map<int, int> count;
  for (int i = 0; i < 10; ++i) {
    const double gamma = sample_beta(replay, alpha);
    std::vector<int> pool;
    for (int j = 0; j < 10; ++j) {
      if (y[j] != y[i]) pool.push_back(j);
    }
    const int j = pool[replay.uniform_index(pool.size())];
    auto& s = sum[y[i]];
    s.resize(3, 0.0);
    for (int r = 0; r < 3; ++r) s[r] += gamma * h(r, i) + (1.0 - gamma) * h(r, j);
    ++count[y[i]];
  }
  for (int k = 0; k < 2; ++k) {
    for (int r = 0; r < 3; ++r) EXPECT_NEAR(got.vector(k)(r), sum[k][r] / count[k], 1e-12);
  }
}

TEST(InitialMean, Examples) {
  const std::vector<PrototypeSet> one{single(1, v2(3, -1))};
  EXPECT_TRUE(initial_mean(one).vector(1) == v2(3, -1));

  const std::vector<PrototypeSet> two{single(0, v2(0, 0)), single(0, v2(2, 0))};
  EXPECT_TRUE(initial_mean(two).vector(0) == v2(1, 0));
}

TEST(InitialMean, MissingClassAveragesOverContributors) {
  Rng rng(8, 0);
  std::vector<PrototypeSet> sets(4);
  for (int m = 0; m < 4; ++m) {
    for (int k = 0; k < 3; ++k) {
      if (m == 1 && k == 2) continue;
      sets[m].set(k, testutil::random_vec(rng, 5), 1);
    }
  }
  const auto mu = initial_mean(sets);
  std::vector<oracle::NaiveSet> naive;
  for (const auto& s : sets) naive.push_back(testutil::to_naive(s));
  const auto expected = oracle::naive_initial_mean(naive);
  for (int k = 0; k < 3; ++k) {
    for (int r = 0; r < 5; ++r) EXPECT_NEAR(mu.vector(k)(r), expected.at(k)[r], 1e-12);
  }
  Vec manual = (sets[0].vector(2) + sets[2].vector(2) + sets[3].vector(2)) / 3.0;
  expect_near(mu.vector(2), manual, 1e-12);
}

TEST(Reweight, SymmetricTwoClients) {
  const std::vector<PrototypeSet> sets{single(0, v2(0, 0)), single(0, v2(2, 0))};
  ReweightReport report;
  const auto g = reweight(sets, initial_mean(sets), &report);
  expect_near(g.vector(0), v2(1, 0), 1e-15);
  const auto& c = report.per_class.at(0);
  EXPECT_DOUBLE_EQ(c.distances[0], 1.0);
  EXPECT_DOUBLE_EQ(c.weights[0], 0.5);
  EXPECT_FALSE(c.fallback);
}

TEST(Reweight, ThreeClientsSkewed) {
  const std::vector<PrototypeSet> sets{single(0, v2(0, 0)), single(0, v2(0, 0)),
                                       single(0, v2(3, 0))};
  const auto mu = initial_mean(sets);
  expect_near(mu.vector(0), v2(1, 0), 1e-15);
  ReweightReport report;
  const auto g = reweight(sets, mu, &report);
  expect_near(g.vector(0), v2(2, 0), 1e-12);
  const auto& c = report.per_class.at(0);
  EXPECT_NEAR(c.weights[0], 1.0 / 6.0, 1e-15);
  EXPECT_NEAR(c.weights[2], 4.0 / 6.0, 1e-15);
  expect_near(average_prototypes(sets).vector(0), v2(1, 0), 1e-15);
}

TEST(Reweight, DegenerateFallbacks) {
  const std::vector<PrototypeSet> solo{single(3, v2(1, 5))};
  ReweightReport report;
  const auto g = reweight(solo, initial_mean(solo), &report);
  EXPECT_TRUE(g.vector(3) == v2(1, 5));
  EXPECT_TRUE(report.per_class.at(3).fallback);

  const std::vector<PrototypeSet> same{single(0, v2(1, 1)), single(0, v2(1, 1)),
                                       single(0, v2(1, 1))};
  ReweightReport r2;
  const auto g2 = reweight(same, initial_mean(same), &r2);
  expect_near(g2.vector(0), v2(1, 1), 1e-15);
  EXPECT_TRUE(r2.per_class.at(0).fallback);
  for (double w : r2.per_class.at(0).weights) EXPECT_DOUBLE_EQ(w, 1.0 / 3.0);
}

TEST(Reweight, ClassMissingFromMeanIsInternalError) {
  const std::vector<PrototypeSet> sets{single(0, v2(0, 0)), single(1, v2(1, 0))};
  const auto mu = initial_mean(std::span<const PrototypeSet>(sets.data(), 1));
  EXPECT_THROW(reweight(sets, mu), InternalError);
}

TEST(Reweight, MatchesNaiveOracle) {
  Rng rng(31, 0);
  for (int trial = 0; trial < 100; ++trial) {
    const int m = 2 + static_cast<int>(rng.uniform_index(7));
    const int k = 1 + static_cast<int>(rng.uniform_index(6));
    const auto d = static_cast<Eigen::Index>(2 + rng.uniform_index(31));
    const auto sets = testutil::random_client_sets(rng, m, k, d);
    const auto g = reweight(sets, initial_mean(sets));
    std::vector<oracle::NaiveSet> naive;
    for (const auto& s : sets) naive.push_back(testutil::to_naive(s));
    const auto expected = oracle::naive_reweight(naive);
    ASSERT_EQ(g.size(), expected.size());
    for (const auto& [cls, vec] : expected) {
      for (Eigen::Index r = 0; r < d; ++r) EXPECT_NEAR(g.vector(cls)(r), vec[r], 1e-12);
    }
  }
}

TEST(ReweightProperties, WeightsConvexAndEquivariant) {
  Rng rng(41, 0);
  for (int trial = 0; trial < 50; ++trial) {
    const int m = 2 + static_cast<int>(rng.uniform_index(5));
    const auto sets = testutil::random_client_sets(rng, m, 3, 4, 1.0);
    ReweightReport report;
    const auto g = reweight(sets, initial_mean(sets), &report);
    for (const auto& [cls, c] : report.per_class) {
      const double total = std::accumulate(c.weights.begin(), c.weights.end(), 0.0);
      EXPECT_NEAR(total, 1.0, 1e-9);
      for (double w : c.weights) EXPECT_GE(w, 0.0);
      for (Eigen::Index r = 0; r < 4; ++r) {
        double lo = 1e300, hi = -1e300;
        for (auto idx : c.clients) {
          lo = std::min(lo, sets[idx].vector(cls)(r));
          hi = std::max(hi, sets[idx].vector(cls)(r));
        }
        EXPECT_GE(g.vector(cls)(r), lo - 1e-12);
        EXPECT_LE(g.vector(cls)(r), hi + 1e-12);
      }
    }

    const Vec shift = testutil::random_vec(rng, 4, 3.0);
    const double scale = 0.1 + 5.0 * rng.uniform();
    std::vector<PrototypeSet> shifted, scaled;
    for (const auto& s : sets) {
      PrototypeSet a, b;
      for (const auto& [cls, e] : s) {
        a.set(cls, e.vector + shift, e.support);
        b.set(cls, scale * e.vector, e.support);
      }
      shifted.push_back(a);
      scaled.push_back(b);
    }
    const auto gs = reweight(shifted, initial_mean(shifted));
    const auto gc = reweight(scaled, initial_mean(scaled));
    for (int cls : g.classes()) {
      expect_near(gs.vector(cls), g.vector(cls) + shift, 1e-9);
      expect_near(gc.vector(cls), scale * g.vector(cls), 1e-9);
    }

    std::vector<PrototypeSet> permuted = sets;
    std::reverse(permuted.begin(), permuted.end());
    const auto gp = reweight(permuted, initial_mean(permuted));
    const auto ap = average_prototypes(permuted);
    const auto a0 = average_prototypes(sets);
    for (int cls : g.classes()) {
      expect_near(gp.vector(cls), g.vector(cls), 1e-12);
      expect_near(ap.vector(cls), a0.vector(cls), 1e-12);
    }
  }
}

TEST(Ema, LimitsAndClosedForm) {
  const auto fresh = single(0, v2(1, 0));
  const auto prev = single(0, v2(0, 0));
  EXPECT_TRUE(ema_update(fresh, &prev, 1.0).vector(0) == v2(1, 0));
  EXPECT_TRUE(ema_update(fresh, &prev, 0.0).vector(0) == v2(0, 0));
  expect_near(ema_update(fresh, &prev, 0.99).vector(0), v2(0.99, 0), 1e-12);
  EXPECT_TRUE(ema_update(fresh, nullptr, 0.5).vector(0) == v2(1, 0));

  PrototypeSet with_new = fresh;
  with_new.set(1, v2(4, 4), 1);
  const auto out = ema_update(with_new, &prev, 0.3);
  EXPECT_TRUE(out.vector(1) == v2(4, 4));
}

TEST(Ema, AffineProperty) {
  Rng rng(51, 0);
  for (int t = 0; t < 20; ++t) {
    const Vec a = testutil::random_vec(rng, 7), b = testutil::random_vec(rng, 7);
    const double beta = rng.uniform();
    const auto fresh = single(2, a), prev = single(2, b);
    expect_near(ema_update(fresh, &prev, beta).vector(2), beta * a + (1 - beta) * b, 1e-12);
  }
}

TEST(PrototypeJson, RoundTrip) {
  PrototypeSet s;
  s.set(0, v2(0.1, 1.0 / 3.0), 4);
  s.set(5, v2(-2.5e-300, 7), 1);
  const auto back = prototypes_from_json(nlohmann::json::parse(to_json(s).dump()));
  EXPECT_EQ(back.classes(), s.classes());
  for (int k : s.classes()) {
    EXPECT_TRUE(back.vector(k) == s.vector(k));
    EXPECT_EQ(back.at(k).support, s.at(k).support);
  }
  EXPECT_THROW(prototypes_from_json(nlohmann::json::parse(R"({"dim":2})")), IngestionError);
}
