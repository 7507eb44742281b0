#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <vector>

#include "cropcast/forest.hpp"
#include "cropcast/raster.hpp"

// Slow reference implementations shared by the unit and acceptance tests.
namespace oracles {

using cropcast::Matrix;
using cropcast::TreeNode;

// Exhaustive greedy split enumeration, node SSE from two direct passes.
struct GreedyTree {
  const Matrix& X;
  const std::vector<double>& y;
  std::size_t max_depth, min_leaf;
  std::vector<TreeNode> nodes;

  static double sse(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    const double m = s / static_cast<double>(v.size());
    double e = 0;
    for (double x : v) e += (x - m) * (x - m);
    return e;
  }

  int grow(const std::vector<std::size_t>& idx, std::size_t depth) {
    const int id = static_cast<int>(nodes.size());
    nodes.emplace_back();
    double sum = 0;
    for (auto i : idx) sum += y[i];
    nodes[id].value = sum / static_cast<double>(idx.size());
    nodes[id].n_samples = idx.size();
    bool constant = true;
    for (auto i : idx) constant = constant && y[i] == y[idx[0]];
    if (depth >= max_depth || idx.size() < 2 * min_leaf || constant) return id;

    std::vector<double> all;
    for (auto i : idx) all.push_back(y[i]);
    const double tol = 1e-12 * sse(all);

    int best_f = -1;
    double best_t = 0, best_sse = 0;
    for (std::size_t f = 0; f < X.cols; ++f) {
      std::vector<double> xs;
      for (auto i : idx) xs.push_back(X(i, f));
      std::sort(xs.begin(), xs.end());
      xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
      for (std::size_t k = 0; k + 1 < xs.size(); ++k) {
        const double t = xs[k] + (xs[k + 1] - xs[k]) / 2;
        std::vector<double> l, r;
        for (auto i : idx) (X(i, f) <= t ? l : r).push_back(y[i]);
        if (l.size() < min_leaf || r.size() < min_leaf) continue;
        const double s = sse(l) + sse(r);
        if (best_f < 0 || s < best_sse - tol) {
          best_f = static_cast<int>(f);
          best_t = t;
          best_sse = s;
        }
      }
    }
    if (best_f < 0) return id;
    std::vector<std::size_t> l, r;
    for (auto i : idx) (X(i, static_cast<std::size_t>(best_f)) <= best_t ? l : r).push_back(i);
    nodes[id].feature = best_f;
    nodes[id].threshold = best_t;
    const int li = grow(l, depth + 1);
    nodes[id].left = li;
    const int ri = grow(r, depth + 1);
    nodes[id].right = ri;
    return id;
  }
};

// Least squares coefficients [b0, b1, ..] via normal equations and Gauss-Jordan.
inline std::vector<double> normal_equations(const Matrix& X, const std::vector<double>& y) {
  const std::size_t p = X.cols + 1;
  std::vector<std::vector<double>> a(p, std::vector<double>(p + 1, 0.0));
  for (std::size_t i = 0; i < X.rows; ++i) {
    std::vector<double> r = {1.0};
    for (std::size_t j = 0; j < X.cols; ++j) r.push_back(X(i, j));
    for (std::size_t u = 0; u < p; ++u) {
      for (std::size_t v = 0; v < p; ++v) a[u][v] += r[u] * r[v];
      a[u][p] += r[u] * y[i];
    }
  }
  for (std::size_t c = 0; c < p; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < p; ++r)
      if (std::abs(a[r][c]) > std::abs(a[piv][c])) piv = r;
    std::swap(a[c], a[piv]);
    for (std::size_t r = 0; r < p; ++r) {
      if (r == c) continue;
      const double f = a[r][c] / a[c][c];
      for (std::size_t k = c; k <= p; ++k) a[r][k] -= f * a[c][k];
    }
  }
  std::vector<double> beta(p);
  for (std::size_t c = 0; c < p; ++c) beta[c] = a[c][p] / a[c][c];
  return beta;
}

// Threshold-crossing scan written from the rule's wording.
inline std::optional<int> onset_scan(const std::vector<double>& v, const std::vector<int>& days) {
  std::vector<double> s = v;
  std::sort(s.begin(), s.end());
  const double base = (s[0] + s[1]) / 2;
  const double amp = s.back() - base;
  if (amp < 0.05) return std::nullopt;
  const double thr = base + 0.2 * amp;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i - 1] < thr && v[i] >= thr) return days[i];
  }
  return std::nullopt;
}

inline std::map<int, cropcast::ZoneStat> zonal_loop(const cropcast::GridRaster& r, const cropcast::ZoneMap& z) {
  std::map<int, cropcast::ZoneStat> out;
  for (std::size_t row = 0; row < r.geo.n_rows; ++row) {
    for (std::size_t col = 0; col < r.geo.n_cols; ++col) {
      const int id = z.zone_ids[row * r.geo.n_cols + col];
      if (id == 0) continue;
      auto& s = out[id];
      if (r.at(row, col) == r.nodata) continue;
      s.sum += r.at(row, col);
      ++s.valid_cell_count;
    }
  }
  return out;
}

}  // namespace oracles
