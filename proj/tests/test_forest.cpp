#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "cropcast/forest.hpp"
#include "oracles.hpp"

using namespace cropcast;

namespace {

struct Dataset {
  Matrix X;
  std::vector<double> y;
};

// Coarse value grids, lots of ties.
Dataset random_dataset(Rng& rng, std::size_t n, std::size_t d) {
  Dataset ds{Matrix(n, d), std::vector<double>(n)};
  for (auto& v : ds.X.data) v = static_cast<double>(rng.index(7)) * 0.5;
  for (auto& v : ds.y) v = static_cast<double>(rng.index(9)) - 4.0;
  return ds;
}

double descend(const RegressionTree& t, std::span<const double> x) {
  std::int32_t i = 0;
  for (;;) {
    const auto& n = t.nodes[static_cast<std::size_t>(i)];
    if (n.feature < 0) return n.value;
    i = x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right;
  }
}

ForestParams single_tree(std::size_t min_leaf = 2, std::size_t depth = 12) {
  ForestParams p;
  p.n_trees = 1;
  p.bootstrap = false;
  p.all_features = true;
  p.min_leaf = min_leaf;
  p.max_depth = depth;
  return p;
}

}  // namespace

TEST(Forest, SingleSamplePredictsItsTarget) {
  const auto f = fit_forest(Matrix::from_rows({{1, 2}}), std::vector<double>{3.5}, {}, 1);
  const std::vector<double> x = {-100, 100};
  EXPECT_EQ(predict_forest(f, x), 3.5);
}

TEST(Forest, ConstantTargetPredictsConstant) {
  Rng rng(2);
  auto ds = random_dataset(rng, 25, 3);
  std::fill(ds.y.begin(), ds.y.end(), 2.25);
  const auto f = fit_forest(ds.X, ds.y, {}, 9);
  for (int k = 0; k < 10; ++k) {
    const std::vector<double> x = {rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5)};
    EXPECT_EQ(predict_forest(f, x), 2.25);
  }
}

TEST(Forest, SingleTreeMatchesExhaustiveOracle) {
  Rng rng(3);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t n = 1 + rng.index(30), d = 1 + rng.index(3);
    const auto ds = random_dataset(rng, n, d);
    const std::size_t min_leaf = 1 + rng.index(3), depth = 1 + rng.index(8);
    const auto f = fit_forest(ds.X, ds.y, single_tree(min_leaf, depth), 5);
    oracles::GreedyTree o{ds.X, ds.y, depth, min_leaf, {}};
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), 0);
    o.grow(all, 0);
    ASSERT_EQ(f.trees.size(), 1u);
    EXPECT_EQ(f.trees[0].nodes, o.nodes) << "trial " << trial;
  }
}

TEST(Forest, TenByTwoExample) {
  Rng rng(10);
  const auto ds = random_dataset(rng, 10, 2);
  const auto f = fit_forest(ds.X, ds.y, single_tree(), 0);
  oracles::GreedyTree o{ds.X, ds.y, 12, 2, {}};
  o.grow({0, 1, 2, 3, 4, 5, 6, 7, 8, 9}, 0);
  EXPECT_EQ(f.trees[0].nodes, o.nodes);
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(predict_forest(f, ds.X.row(i)), descend(RegressionTree{o.nodes}, ds.X.row(i)));
}

TEST(Forest, HandBuiltTreesPredict) {
  RegressionForest f;
  f.n_features = 2;
  f.trees = {RegressionTree{{TreeNode{-1, 0, -1, -1, 7.0, 1}}}};
  const std::vector<double> x = {1, 2};
  EXPECT_EQ(predict_forest(f, x), 7.0);
  f.trees = {RegressionTree{{TreeNode{-1, 0, -1, -1, 4.0, 1}}}, RegressionTree{{TreeNode{-1, 0, -1, -1, 6.0, 1}}}};
  EXPECT_EQ(predict_forest(f, x), 5.0);
}

TEST(Forest, PredictionEqualsMeanOfDescents) {
  Rng rng(4);
  const auto ds = random_dataset(rng, 60, 4);
  ForestParams p;
  p.n_trees = 15;
  const auto f = fit_forest(ds.X, ds.y, p, 17);
  for (int k = 0; k < 30; ++k) {
    const std::vector<double> x = {rng.uniform(0, 3), rng.uniform(0, 3), rng.uniform(0, 3), rng.uniform(0, 3)};
    double s = 0;
    for (const auto& t : f.trees) s += descend(t, x);
    EXPECT_EQ(predict_forest(f, x), s / 15.0);
  }
}

TEST(Forest, PredictionsStayWithinTargetRange) {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const auto ds = random_dataset(rng, 40, 3);
    ForestParams p;
    p.n_trees = 10;
    const auto f = fit_forest(ds.X, ds.y, p, static_cast<std::uint64_t>(trial));
    const auto [lo, hi] = std::minmax_element(ds.y.begin(), ds.y.end());
    for (int k = 0; k < 20; ++k) {
      const std::vector<double> x = {rng.uniform(-10, 10), rng.uniform(-10, 10), rng.uniform(-10, 10)};
      const double v = predict_forest(f, x);
      EXPECT_GE(v, *lo);
      EXPECT_LE(v, *hi);
    }
  }
}

TEST(Forest, DeepTreeFitsUniqueRowsExactly) {
  Rng rng(6);
  Matrix X(30, 2);
  std::vector<double> y(30);
  for (std::size_t i = 0; i < 30; ++i) {
    X(i, 0) = static_cast<double>(i);
    X(i, 1) = rng.uniform();
    y[i] = rng.uniform(-5, 5);
  }
  const auto f = fit_forest(X, y, single_tree(1, 64), 1);
  for (std::size_t i = 0; i < 30; ++i) EXPECT_EQ(predict_forest(f, X.row(i)), y[i]);
}

TEST(Forest, DeterministicAcrossRunsAndThreads) {
  Rng rng(7);
  const auto ds = random_dataset(rng, 80, 4);
  ForestParams p;
  p.n_trees = 12;
  const auto a = fit_forest(ds.X, ds.y, p, 99);
  const auto b = fit_forest(ds.X, ds.y, p, 99);
  p.threads = 3;
  const auto c = fit_forest(ds.X, ds.y, p, 99);
  EXPECT_EQ(a.trees, b.trees);
  EXPECT_EQ(a.trees, c.trees);
}

TEST(Forest, JsonRoundTrip) {
  Rng rng(8);
  const auto ds = random_dataset(rng, 30, 3);
  ForestParams p;
  p.n_trees = 4;
  const auto f = fit_forest(ds.X, ds.y, p, 3);
  const auto back = forest_from_json(nlohmann::json::parse(forest_to_json(f).dump()));
  EXPECT_EQ(back.trees, f.trees);
  EXPECT_EQ(back.n_features, f.n_features);
  EXPECT_EQ(back.seed, f.seed);
}

TEST(Forest, ShapeErrors) {
  try {
    fit_forest(Matrix(3, 2), std::vector<double>{1, 2}, {}, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::DimensionMismatch);
  }
}

TEST(ForecastSeries, ConstantHistory) {
  SeasonalHistory h{1, 16, {std::vector<double>(10, 3.0), std::vector<double>(10, 3.0), std::vector<double>(4, 3.0)}};
  const auto fc = forecast_series(h, 96, {}, 1);
  ASSERT_EQ(fc.size(), 6u);
  for (double v : fc) EXPECT_EQ(v, 3.0);
}

TEST(ForecastSeries, PeriodicHistoryRepeatsLastSeason) {
  const std::vector<double> season = {0.2, 0.25, 0.4, 0.7, 0.9, 0.85, 0.6, 0.35, 0.22, 0.2};
  SeasonalHistory h{1, 16, {season, season, {season.begin(), season.begin() + 4}}};
  ForestParams p = single_tree(1, 32);
  const auto fc = forecast_series(h, 6 * 16, p, 1);
  ASSERT_EQ(fc.size(), 6u);
  for (std::size_t s = 0; s < 6; ++s) EXPECT_DOUBLE_EQ(fc[s], season[4 + s]);
}

TEST(ForecastSeries, EmptyHorizon) {
  SeasonalHistory h{1, 16, {std::vector<double>(5, 1.0), std::vector<double>(5, 1.0), {1.0}}};
  EXPECT_TRUE(forecast_series(h, 0, {}, 1).empty());
  EXPECT_TRUE(forecast_series(h, 15, {}, 1).empty());
}

TEST(ForecastSeries, InsufficientHistory) {
  SeasonalHistory h{1, 16, {std::vector<double>(5, 1.0)}};
  try {
    forecast_series(h, 32, {}, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::InsufficientHistory);
  }
}

TEST(ForecastSeries, PooledIsDeterministic) {
  Rng rng(9);
  std::vector<SeasonalHistory> px;
  for (int i = 0; i < 20; ++i) {
    SeasonalHistory h{1, 16, {}};
    for (int s = 0; s < 3; ++s) {
      std::vector<double> v;
      for (int k = 0; k < (s == 2 ? 8 : 23); ++k) v.push_back(std::sin(k * 0.27) + rng.uniform(0, 0.1));
      h.seasons.push_back(v);
    }
    px.push_back(h);
  }
  ForestParams p;
  p.n_trees = 10;
  const auto a = forecast_pooled(px, 160, p, 5);
  const auto b = forecast_pooled(px, 160, p, 5);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.front().size(), 10u);
}
