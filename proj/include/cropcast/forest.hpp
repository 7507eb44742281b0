#pragma once

// Random-forest regression and the seasonal roll-forward forecaster built on
// it. Trees are CART-style: each split minimizes the summed squared error of
// the two children; thresholds sit halfway between adjacent distinct values.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "cropcast/error.hpp"
#include "cropcast/matrix.hpp"
#include "cropcast/rng.hpp"

namespace cropcast {

struct ForestParams {
  std::size_t n_trees = 100;
  std::size_t max_depth = 12;
  std::size_t min_leaf = 2;
  bool bootstrap = true;
  /// Consider every feature at each node instead of a random ceil(sqrt(d)).
  bool all_features = false;
  std::size_t threads = 1;
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  std::int32_t left = -1;
  std::int32_t right = -1;
  double value = 0.0;  // mean target of the node's training samples
  std::size_t n_samples = 0;

  [[nodiscard]] bool is_leaf() const noexcept { return feature < 0; }
  friend bool operator==(const TreeNode&, const TreeNode&) = default;
};

/// Nodes in depth-first (pre-order) layout; index 0 is the root.
struct RegressionTree {
  std::vector<TreeNode> nodes;

  [[nodiscard]] double predict(std::span<const double> x) const {
    std::size_t i = 0;
    while (!nodes[i].is_leaf()) {
      const auto& n = nodes[i];
      i = static_cast<std::size_t>(x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right);
    }
    return nodes[i].value;
  }
  friend bool operator==(const RegressionTree&, const RegressionTree&) = default;
};

struct RegressionForest {
  std::vector<RegressionTree> trees;
  std::size_t n_features = 0;
  ForestParams params;
  std::uint64_t seed = 0;
};

/// Relative tolerance under which two split scores count as equal; ties go to
/// the lower feature index, then the lower threshold.
inline constexpr double kSplitTieTolerance = 1e-12;

inline double split_midpoint(double lo, double hi) {
  const double mid = lo + (hi - lo) / 2.0;
  return (mid < hi) ? mid : lo;
}

namespace detail {

class TreeBuilder {
 public:
  TreeBuilder(const Matrix& X, std::span<const double> y, const ForestParams& params, Rng& rng)
      : X_(X), y_(y), params_(params), rng_(rng) {}

  // Samples are addressed by their position ("entry") in `idx`. Each feature
  // keeps its entries sorted by (value, entry); splits partition these lists
  // stably, so every node sees the same order a fresh stable sort would give.
  RegressionTree build(std::vector<std::size_t> idx) {
    idx_ = std::move(idx);
    const std::size_t m = idx_.size();
    sorted_.assign(X_.cols, {});
    cols_.assign(X_.cols, std::vector<double>(m));
    ys_.resize(m);
    for (std::size_t e = 0; e < m; ++e) {
      ys_[e] = y_[idx_[e]];
      for (std::size_t f = 0; f < X_.cols; ++f) cols_[f][e] = X_(idx_[e], f);
    }
    std::vector<std::pair<double, std::uint32_t>> keyed(m);
    for (std::size_t f = 0; f < X_.cols; ++f) {
      for (std::size_t e = 0; e < m; ++e) keyed[e] = {cols_[f][e], static_cast<std::uint32_t>(e)};
      std::sort(keyed.begin(), keyed.end());
      sorted_[f].resize(m);
      for (std::size_t e = 0; e < m; ++e) sorted_[f][e] = keyed[e].second;
    }
    goes_left_.assign(m, 0);
    scratch_.resize(m);
    RegressionTree tree;
    std::vector<std::uint32_t> entries(m);
    std::iota(entries.begin(), entries.end(), std::uint32_t{0});
    grow(tree, entries, 0, 0, m);
    return tree;
  }

 private:
  struct Split {
    int feature = -1;
    double threshold = 0.0;
    double sse = 0.0;
  };

  std::vector<std::size_t> candidate_features() {
    const std::size_t d = X_.cols;
    std::vector<std::size_t> all(d);
    std::iota(all.begin(), all.end(), std::size_t{0});
    if (params_.all_features) return all;
    const auto k = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(d))));
    for (std::size_t i = 0; i < k && i < d; ++i) std::swap(all[i], all[i + rng_.index(d - i)]);
    all.resize(std::min(k, d));
    return all;
  }

  double x(std::uint32_t e, std::size_t f) const { return cols_[f][e]; }
  double yv(std::uint32_t e) const { return ys_[e]; }

  // Best split of the node's entries [lo, hi) on feature `f`, keeping `best`
  // unless a threshold with min_leaf samples per side beats it.
  std::optional<Split> best_on_feature(std::size_t lo, std::size_t hi, std::size_t f, double node_mean, double total,
                                       double total_sq, double tol, std::optional<Split> best) {
    const auto& order = sorted_[f];
    const std::size_t n = hi - lo;
    double left = 0.0, left_sq = 0.0;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      const double d = yv(order[lo + p]) - node_mean;
      left += d;
      left_sq += d * d;
      const std::size_t nl = p + 1, nr = n - nl;
      const double xl = x(order[lo + p], f), xr = x(order[lo + p + 1], f);
      if (!(xl < xr) || nl < params_.min_leaf || nr < params_.min_leaf) continue;
      const double right = total - left, right_sq = total_sq - left_sq;
      const double sse = (left_sq - left * left / static_cast<double>(nl)) +
                         (right_sq - right * right / static_cast<double>(nr));
      if (!best || sse < best->sse - tol) best = Split{static_cast<int>(f), split_midpoint(xl, xr), sse};
    }
    return best;
  }

  // `entries` lists the node's samples in ascending entry order; every
  // sorted_[f] holds the same samples in slots [lo, hi).
  std::int32_t grow(RegressionTree& tree, const std::vector<std::uint32_t>& entries, std::size_t depth,
                    std::size_t lo, std::size_t hi) {
    const auto node_id = static_cast<std::int32_t>(tree.nodes.size());
    tree.nodes.emplace_back();

    double sum = 0.0;
    for (auto e : entries) sum += yv(e);
    const double mean = sum / static_cast<double>(entries.size());
    tree.nodes[node_id].value = mean;
    tree.nodes[node_id].n_samples = entries.size();

    const double first = yv(entries.front());
    const bool constant = std::all_of(entries.begin(), entries.end(), [&](std::uint32_t e) { return yv(e) == first; });
    if (depth >= params_.max_depth || entries.size() < 2 * params_.min_leaf || constant) return node_id;

    double node_sse = 0.0, total = 0.0;
    for (auto e : entries) {
      const double d = yv(e) - mean;
      total += d;
      node_sse += d * d;
    }
    const double tol = kSplitTieTolerance * node_sse;

    auto sampled = candidate_features();
    std::sort(sampled.begin(), sampled.end());
    std::optional<Split> best;
    for (auto f : sampled) best = best_on_feature(lo, hi, f, mean, total, node_sse, tol, best);
    if (!best && sampled.size() < X_.cols) {
      // None of the sampled features separates this node; widen to the rest.
      for (std::size_t f = 0; f < X_.cols; ++f) {
        if (!std::binary_search(sampled.begin(), sampled.end(), f)) {
          best = best_on_feature(lo, hi, f, mean, total, node_sse, tol, best);
        }
      }
    }
    if (!best) return node_id;

    const auto bf = static_cast<std::size_t>(best->feature);
    std::vector<std::uint32_t> left, right;
    for (auto e : entries) {
      const bool l = x(e, bf) <= best->threshold;
      goes_left_[e] = l ? 1 : 0;
      (l ? left : right).push_back(e);
    }
    for (auto& order : sorted_) {
      std::size_t nl = 0, nr = 0;
      for (std::size_t p = lo; p < hi; ++p) {
        const auto e = order[p];
        if (goes_left_[e]) order[lo + nl++] = e;
        else scratch_[nr++] = e;
      }
      std::copy(scratch_.begin(), scratch_.begin() + static_cast<std::ptrdiff_t>(nr),
                order.begin() + static_cast<std::ptrdiff_t>(lo + nl));
    }
    const std::size_t mid = lo + left.size();
    tree.nodes[node_id].feature = best->feature;
    tree.nodes[node_id].threshold = best->threshold;
    const auto l = grow(tree, left, depth + 1, lo, mid);
    tree.nodes[node_id].left = l;
    left = {};
    const auto r = grow(tree, right, depth + 1, mid, hi);
    tree.nodes[node_id].right = r;
    return node_id;
  }

  const Matrix& X_;
  std::span<const double> y_;
  const ForestParams& params_;
  Rng& rng_;
  std::vector<std::size_t> idx_;
  std::vector<std::vector<std::uint32_t>> sorted_;
  std::vector<std::vector<double>> cols_;
  std::vector<double> ys_;
  std::vector<std::uint8_t> goes_left_;
  std::vector<std::uint32_t> scratch_;
};

}  // namespace detail

/// Trains `params.n_trees` trees. Tree `t` draws its bootstrap sample and
/// feature subsets from the stream derive_seed(seed, t), so the forest is the
/// same for any thread count.
inline RegressionForest fit_forest(const Matrix& X, std::span<const double> y, const ForestParams& params,
                                   std::uint64_t seed) {
  if (X.rows == 0) throw Error(Errc::EmptyDataset, "fit_forest: no samples");
  if (X.rows != y.size()) throw Error(Errc::DimensionMismatch, "fit_forest: X rows and y length differ");
  if (X.cols == 0) throw Error(Errc::DimensionMismatch, "fit_forest: no features");
  if (params.n_trees == 0 || params.min_leaf == 0) throw Error(Errc::InvalidConfig, "fit_forest: n_trees and min_leaf must be >= 1");

  RegressionForest forest;
  forest.n_features = X.cols;
  forest.params = params;
  forest.seed = seed;
  forest.trees.resize(params.n_trees);

  auto train_tree = [&](std::size_t t) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(t)));
    std::vector<std::size_t> idx(X.rows);
    if (params.bootstrap) {
      for (auto& i : idx) i = rng.index(X.rows);
      std::sort(idx.begin(), idx.end());
    } else {
      std::iota(idx.begin(), idx.end(), std::size_t{0});
    }
    detail::TreeBuilder builder(X, y, params, rng);
    forest.trees[t] = builder.build(std::move(idx));
  };

  const std::size_t n_threads = std::clamp<std::size_t>(params.threads, 1, params.n_trees);
  if (n_threads == 1) {
    for (std::size_t t = 0; t < params.n_trees; ++t) train_tree(t);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < n_threads; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t t = w; t < params.n_trees; t += n_threads) train_tree(t);
      });
    }
  }
  return forest;
}

inline double predict_forest(const RegressionForest& f, std::span<const double> x) {
  if (x.size() != f.n_features) throw Error(Errc::DimensionMismatch, "predict_forest: feature count differs");
  double sum = 0.0;
  for (const auto& t : f.trees) sum += t.predict(x);
  return sum / static_cast<double>(f.trees.size());
}

// ---------------------------------------------------------------------------
// Persistence

inline nlohmann::ordered_json forest_to_json(const RegressionForest& f) {
  nlohmann::ordered_json j;
  j["n_features"] = f.n_features;
  j["seed"] = f.seed;
  j["params"] = {{"n_trees", f.params.n_trees},
                 {"max_depth", f.params.max_depth},
                 {"min_leaf", f.params.min_leaf},
                 {"bootstrap", f.params.bootstrap},
                 {"all_features", f.params.all_features}};
  auto& trees = j["trees"] = nlohmann::ordered_json::array();
  for (const auto& t : f.trees) {
    nlohmann::ordered_json jt;
    std::vector<int> feature, left, right;
    std::vector<double> threshold, value;
    std::vector<std::size_t> n;
    for (const auto& node : t.nodes) {
      feature.push_back(node.feature);
      threshold.push_back(node.threshold);
      left.push_back(node.left);
      right.push_back(node.right);
      value.push_back(node.value);
      n.push_back(node.n_samples);
    }
    jt["feature"] = feature;
    jt["threshold"] = threshold;
    jt["left"] = left;
    jt["right"] = right;
    jt["value"] = value;
    jt["n_samples"] = n;
    trees.push_back(std::move(jt));
  }
  return j;
}

inline RegressionForest forest_from_json(const nlohmann::json& j) {
  try {
    RegressionForest f;
    f.n_features = j.at("n_features").get<std::size_t>();
    f.seed = j.at("seed").get<std::uint64_t>();
    const auto& p = j.at("params");
    f.params.n_trees = p.at("n_trees").get<std::size_t>();
    f.params.max_depth = p.at("max_depth").get<std::size_t>();
    f.params.min_leaf = p.at("min_leaf").get<std::size_t>();
    f.params.bootstrap = p.at("bootstrap").get<bool>();
    f.params.all_features = p.at("all_features").get<bool>();
    for (const auto& jt : j.at("trees")) {
      RegressionTree t;
      const auto feature = jt.at("feature").get<std::vector<int>>();
      const auto threshold = jt.at("threshold").get<std::vector<double>>();
      const auto left = jt.at("left").get<std::vector<int>>();
      const auto right = jt.at("right").get<std::vector<int>>();
      const auto value = jt.at("value").get<std::vector<double>>();
      const auto n = jt.at("n_samples").get<std::vector<std::size_t>>();
      for (std::size_t i = 0; i < feature.size(); ++i) {
        t.nodes.push_back({feature[i], threshold[i], left[i], right[i], value[i], n[i]});
      }
      f.trees.push_back(std::move(t));
    }
    return f;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ParseError, std::string("forest JSON: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Seasonal roll-forward forecasting.

/// One pixel's history of a parameter at a fixed cadence, one vector per
/// season (year). Every season but the last must be complete; the last holds
/// the observations so far. Missing observations are NaN.
struct SeasonalHistory {
  int start_day = 1;
  int cadence_days = 16;
  std::vector<std::vector<double>> seasons;
};

inline constexpr std::size_t kForecastFeatureCount = 4;  // day, lag-1, lag-2, same day last year

namespace detail {

inline std::vector<double> flatten(const SeasonalHistory& h) {
  std::vector<double> v;
  for (const auto& s : h.seasons) v.insert(v.end(), s.begin(), s.end());
  return v;
}

inline std::array<double, kForecastFeatureCount> forecast_features(const std::vector<double>& series, std::size_t t,
                                                                   std::size_t season_len, int start_day,
                                                                   int cadence) {
  const auto doy = static_cast<double>(start_day + static_cast<int>(t % season_len) * cadence);
  return {doy, series[t - 1], series[t - 2], series[t - season_len]};
}

}  // namespace detail

/// Forecasts `horizon_days / cadence` further steps for every pixel from one
/// forest pooled over all pixels. The forest maps (day of year, previous
/// value, value before that, value one season earlier) to the value, and the
/// roll-forward feeds its own outputs back as lags. Pixels whose lags are
/// missing get NaN forecasts.
inline std::vector<std::vector<double>> forecast_pooled(const std::vector<SeasonalHistory>& pixels, int horizon_days,
                                                        const ForestParams& params, std::uint64_t seed) {
  if (pixels.empty()) throw Error(Errc::InsufficientHistory, "forecast: no pixels");
  const auto& ref = pixels.front();
  if (ref.cadence_days < 1) throw Error(Errc::InvalidConfig, "forecast: cadence must be >= 1");
  if (ref.seasons.size() < 2) throw Error(Errc::InsufficientHistory, "forecast: need at least two seasons");
  const std::size_t season_len = ref.seasons.front().size();
  if (season_len < 3) throw Error(Errc::InsufficientHistory, "forecast: seasons need at least 3 observations");

  for (const auto& px : pixels) {
    if (px.start_day != ref.start_day || px.cadence_days != ref.cadence_days ||
        px.seasons.size() != ref.seasons.size()) {
      throw Error(Errc::DimensionMismatch, "forecast: pixel histories differ in layout");
    }
    for (std::size_t s = 0; s + 1 < px.seasons.size(); ++s) {
      if (px.seasons[s].size() != season_len) throw Error(Errc::InsufficientHistory, "forecast: incomplete past season");
    }
    if (px.seasons.back().size() > season_len || px.seasons.back().size() != ref.seasons.back().size()) {
      throw Error(Errc::DimensionMismatch, "forecast: current season lengths differ");
    }
  }

  const std::size_t steps = horizon_days > 0 ? static_cast<std::size_t>(horizon_days / ref.cadence_days) : 0;
  std::vector<std::vector<double>> out(pixels.size());
  if (steps == 0) return out;

  Matrix X(0, kForecastFeatureCount);
  std::vector<double> y;
  std::vector<std::vector<double>> series(pixels.size());
  for (std::size_t p = 0; p < pixels.size(); ++p) {
    series[p] = detail::flatten(pixels[p]);
    const auto& v = series[p];
    for (std::size_t t = season_len; t < v.size(); ++t) {
      const auto f = detail::forecast_features(v, t, season_len, ref.start_day, ref.cadence_days);
      if (std::isnan(v[t]) || std::any_of(f.begin(), f.end(), [](double x) { return std::isnan(x); })) continue;
      X.append_row(f);
      y.push_back(v[t]);
    }
  }
  if (y.empty()) throw Error(Errc::InsufficientHistory, "forecast: no complete training samples");

  const RegressionForest forest = fit_forest(X, y, params, seed);
  for (std::size_t p = 0; p < pixels.size(); ++p) {
    auto& v = series[p];
    for (std::size_t s = 0; s < steps; ++s) {
      const std::size_t t = v.size();
      const auto f = detail::forecast_features(v, t, season_len, ref.start_day, ref.cadence_days);
      const bool missing = std::any_of(f.begin(), f.end(), [](double x) { return std::isnan(x); });
      const double next = missing ? std::nan("") : predict_forest(forest, f);
      v.push_back(next);
      out[p].push_back(next);
    }
  }
  return out;
}

/// Single-pixel form of forecast_pooled.
inline std::vector<double> forecast_series(const SeasonalHistory& history, int horizon_days,
                                           const ForestParams& params, std::uint64_t seed) {
  return forecast_pooled({history}, horizon_days, params, seed).front();
}

}  // namespace cropcast
