#pragma once

// Feed-forward regression network for pixel production: z-scored inputs and
// target, dense hidden layers (relu or tanh), one linear output, trained by
// mini-batch gradient descent on mean squared error with early stopping on
// validation RMSE.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "cropcast/error.hpp"
#include "cropcast/matrix.hpp"
#include "cropcast/rng.hpp"
#include "cropcast/season_features.hpp"

namespace cropcast {

// ---------------------------------------------------------------------------
// Metrics

inline double rmse(std::span<const double> pred, std::span<const double> actual) {
  if (pred.size() != actual.size()) throw Error(Errc::LengthMismatch, "rmse: lengths differ");
  if (pred.empty()) throw Error(Errc::EmptyInput, "rmse: empty input");
  double ss = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) ss += (pred[i] - actual[i]) * (pred[i] - actual[i]);
  return std::sqrt(ss / static_cast<double>(pred.size()));
}

/// Coefficient of determination; 1 - SS_res / SS_tot.
inline double r_squared(std::span<const double> pred, std::span<const double> actual) {
  if (pred.size() != actual.size()) throw Error(Errc::LengthMismatch, "r_squared: lengths differ");
  if (pred.empty()) throw Error(Errc::EmptyInput, "r_squared: empty input");
  const double mean = std::accumulate(actual.begin(), actual.end(), 0.0) / static_cast<double>(actual.size());
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    ss_res += (pred[i] - actual[i]) * (pred[i] - actual[i]);
    ss_tot += (actual[i] - mean) * (actual[i] - mean);
  }
  return ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : (ss_res == 0.0 ? 1.0 : -INFINITY);
}

// ---------------------------------------------------------------------------
// Splitting

struct SplitSpec {
  double train_frac = 0.7;
  double val_frac = 0.15;
  double test_frac = 0.15;
  std::uint64_t seed = 0;

  /// Empty when valid, otherwise a description of the violation.
  [[nodiscard]] std::string problem() const {
    for (double f : {train_frac, val_frac, test_frac}) {
      if (!(f > 0.0 && f < 1.0)) return "split fractions must lie in (0,1)";
    }
    if (std::abs(train_frac + val_frac + test_frac - 1.0) > 1e-12) return "split fractions must sum to 1";
    return {};
  }
};

struct DatasetSplit {
  FeatureDataset train, val, test;
};

/// Seeded shuffle, then floor(n*val_frac) validation and floor(n*test_frac)
/// test samples; the remainder trains. Each part keeps shuffled order.
inline DatasetSplit split_dataset(const FeatureDataset& ds, const SplitSpec& spec) {
  if (ds.size() == 0) throw Error(Errc::EmptyDataset, "split_dataset: empty dataset");
  if (const auto p = spec.problem(); !p.empty()) throw Error(Errc::InvalidConfig, p);

  const std::size_t n = ds.size();
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(spec.seed);
  for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.index(i)]);

  // 1e-9 slack on products like 100*0.15
  const auto n_val = static_cast<std::size_t>(std::floor(static_cast<double>(n) * spec.val_frac + 1e-9));
  const auto n_test = static_cast<std::size_t>(std::floor(static_cast<double>(n) * spec.test_frac + 1e-9));
  const std::size_t n_train = n - n_val - n_test;

  const std::span<const std::size_t> all(perm);
  return {ds.subset(all.subspan(0, n_train)), ds.subset(all.subspan(n_train, n_val)),
          ds.subset(all.subspan(n_train + n_val, n_test))};
}

// ---------------------------------------------------------------------------
// Normalization

struct NormStats {
  std::size_t n_inputs = 0;                // width of raw feature rows
  std::vector<std::size_t> kept_features;  // raw column of each model input
  std::vector<std::string> dropped_features;
  std::vector<double> feature_mean, feature_std;  // per kept feature
  double target_mean = 0.0;
  double target_std = 1.0;

  [[nodiscard]] double denormalize_target(double z) const noexcept { return z * target_std + target_mean; }
  [[nodiscard]] double normalize_target(double y) const noexcept { return (y - target_mean) / target_std; }
};

/// Population z-score statistics. Constant features are dropped and listed;
/// a constant target keeps unit scale.
inline NormStats fit_norm_stats(const FeatureDataset& ds) {
  NormStats st;
  st.n_inputs = ds.X.cols;
  const auto n = static_cast<double>(ds.size());
  if (ds.size() == 0) throw Error(Errc::EmptyDataset, "normalize: empty dataset");
  for (std::size_t j = 0; j < ds.X.cols; ++j) {
    double sum = 0.0;
    for (std::size_t i = 0; i < ds.size(); ++i) sum += ds.X(i, j);
    const double mean = sum / n;
    double ss = 0.0;
    for (std::size_t i = 0; i < ds.size(); ++i) ss += (ds.X(i, j) - mean) * (ds.X(i, j) - mean);
    const double sd = std::sqrt(ss / n);
    if (sd > 0.0) {
      st.kept_features.push_back(j);
      st.feature_mean.push_back(mean);
      st.feature_std.push_back(sd);
    } else {
      st.dropped_features.push_back(j < ds.feature_names.size() ? ds.feature_names[j] : std::to_string(j));
    }
  }
  if (!ds.y.empty()) {
    const double mean = std::accumulate(ds.y.begin(), ds.y.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : ds.y) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / n);
    st.target_mean = mean;
    st.target_std = sd > 0.0 ? sd : 1.0;
  }
  return st;
}

inline void normalize_row(const NormStats& st, std::span<const double> raw, std::span<double> out) {
  for (std::size_t k = 0; k < st.kept_features.size(); ++k) {
    out[k] = (raw[st.kept_features[k]] - st.feature_mean[k]) / st.feature_std[k];
  }
}

/// Applies `stats` (fitted on `ds` when absent) and returns the normalized
/// dataset with the dropped columns removed.
inline std::pair<FeatureDataset, NormStats> normalize(const FeatureDataset& ds,
                                                      const std::optional<NormStats>& stats = std::nullopt) {
  const NormStats st = stats ? *stats : fit_norm_stats(ds);
  if (ds.X.cols != st.n_inputs) throw Error(Errc::DimensionMismatch, "normalize: feature count differs from stats");
  FeatureDataset out;
  for (auto j : st.kept_features) out.feature_names.push_back(j < ds.feature_names.size() ? ds.feature_names[j] : "");
  out.X = Matrix(ds.size(), st.kept_features.size());
  for (std::size_t i = 0; i < ds.size(); ++i) normalize_row(st, ds.X.row(i), out.X.row(i));
  out.y.reserve(ds.y.size());
  for (double v : ds.y) out.y.push_back(st.normalize_target(v));
  out.pixel_index = ds.pixel_index;
  return {std::move(out), st};
}

// ---------------------------------------------------------------------------
// Model

enum class Activation { relu, tanh };

inline std::string_view to_string(Activation a) noexcept { return a == Activation::relu ? "relu" : "tanh"; }

struct MlpHyper {
  std::vector<std::size_t> hidden = {32, 32};
  Activation activation = Activation::relu;
  double learning_rate = 1e-3;
  std::size_t batch_size = 32;
  std::size_t patience = 20;
  std::size_t max_epochs = 500;
};

struct DenseLayer {
  Matrix weights;  // out x in
  std::vector<double> bias;

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

struct EpochLog {
  std::size_t epoch = 0;
  double train_rmse = 0.0;  // normalized units
  double val_rmse = 0.0;
};

struct MlpModel {
  std::vector<std::size_t> layer_sizes;  // input, hidden..., 1
  std::vector<DenseLayer> layers;
  Activation activation = Activation::relu;
  NormStats norm;
  std::uint64_t seed = 0;
  std::vector<EpochLog> log;
  std::size_t best_epoch = 0;

  [[nodiscard]] std::size_t n_parameters() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weights.data.size() + l.bias.size();
    return n;
  }
};

/// Glorot-uniform weights, zero biases.
inline MlpModel init_mlp(const std::vector<std::size_t>& layer_sizes, Activation act, std::uint64_t seed) {
  if (layer_sizes.size() < 2 || layer_sizes.back() != 1) {
    throw Error(Errc::InvalidConfig, "network needs an input width and a single output");
  }
  MlpModel m;
  m.layer_sizes = layer_sizes;
  m.activation = act;
  m.seed = seed;
  Rng rng(derive_seed(seed, "init"));
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
    const std::size_t in = layer_sizes[l], out = layer_sizes[l + 1];
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    DenseLayer layer{Matrix(out, in), std::vector<double>(out, 0.0)};
    for (auto& w : layer.weights.data) w = rng.uniform(-limit, limit);
    m.layers.push_back(std::move(layer));
  }
  return m;
}

namespace detail {

inline double activate(Activation a, double z) { return a == Activation::relu ? (z > 0.0 ? z : 0.0) : std::tanh(z); }

// Derivative expressed through the activation output h.
inline double activate_grad(Activation a, double z, double h) {
  return a == Activation::relu ? (z > 0.0 ? 1.0 : 0.0) : 1.0 - h * h;
}

/// Pre-activations and activations for one normalized input row.
struct ForwardTrace {
  std::vector<std::vector<double>> z, h;  // h[0] = input
};

inline double forward(const MlpModel& m, std::span<const double> x, ForwardTrace* trace = nullptr) {
  std::vector<double> cur(x.begin(), x.end());
  if (trace) {
    trace->z.assign(m.layers.size(), {});
    trace->h.assign(m.layers.size() + 1, {});
    trace->h[0] = cur;
  }
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    const auto& L = m.layers[l];
    const bool last = l + 1 == m.layers.size();
    std::vector<double> z(L.weights.rows), h(L.weights.rows);
    for (std::size_t o = 0; o < L.weights.rows; ++o) {
      double s = L.bias[o];
      const auto w = L.weights.row(o);
      for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * cur[i];
      z[o] = s;
      h[o] = last ? s : activate(m.activation, s);
    }
    if (trace) {
      trace->z[l] = z;
      trace->h[l + 1] = h;
    }
    cur = std::move(h);
  }
  return cur.front();
}

}  // namespace detail

/// Network output in normalized target units for a normalized input row.
inline double forward_normalized(const MlpModel& m, std::span<const double> x_norm) {
  if (x_norm.size() != m.layer_sizes.front()) throw Error(Errc::DimensionMismatch, "network input width differs");
  return detail::forward(m, x_norm);
}

/// Denormalized output for a raw feature row, without the nonnegativity clamp.
inline double forward_raw(const MlpModel& m, std::span<const double> raw) {
  if (raw.size() != m.norm.n_inputs) throw Error(Errc::DimensionMismatch, "predict: feature count differs from model");
  std::vector<double> x(m.norm.kept_features.size());
  normalize_row(m.norm, raw, x);
  return m.norm.denormalize_target(detail::forward(m, x));
}

/// Production per row of raw features (tonnes per cell), clamped at 0.
inline std::vector<double> predict_mlp(const MlpModel& m, const Matrix& X) {
  if (X.rows > 0 && X.cols != m.norm.n_inputs) throw Error(Errc::DimensionMismatch, "predict: feature count differs from model");
  std::vector<double> out(X.rows);
  for (std::size_t i = 0; i < X.rows; ++i) out[i] = std::max(0.0, forward_raw(m, X.row(i)));
  return out;
}

/// Parameters flattened layer by layer as (weights row-major, biases).
inline std::vector<double> flatten_parameters(const MlpModel& m) {
  std::vector<double> p;
  p.reserve(m.n_parameters());
  for (const auto& l : m.layers) {
    p.insert(p.end(), l.weights.data.begin(), l.weights.data.end());
    p.insert(p.end(), l.bias.begin(), l.bias.end());
  }
  return p;
}

inline void assign_parameters(MlpModel& m, std::span<const double> p) {
  if (p.size() != m.n_parameters()) throw Error(Errc::DimensionMismatch, "parameter vector length differs");
  std::size_t k = 0;
  for (auto& l : m.layers) {
    for (auto& w : l.weights.data) w = p[k++];
    for (auto& b : l.bias) b = p[k++];
  }
}

/// Mean squared error over the rows of normalized `X` against normalized `y`,
/// with its gradient (flattened like flatten_parameters) written to `grad`.
inline double loss_and_gradient(const MlpModel& m, const Matrix& X, std::span<const double> y,
                                std::span<const std::size_t> rows, std::vector<double>& grad) {
  grad.assign(m.n_parameters(), 0.0);
  std::vector<std::size_t> offset(m.layers.size());
  for (std::size_t l = 0, k = 0; l < m.layers.size(); ++l) {
    offset[l] = k;
    k += m.layers[l].weights.data.size() + m.layers[l].bias.size();
  }
  detail::ForwardTrace tr;
  double loss = 0.0;
  const double inv_n = 1.0 / static_cast<double>(rows.size());
  for (auto r : rows) {
    const double out = detail::forward(m, X.row(r), &tr);
    const double err = out - y[r];
    loss += err * err;
    std::vector<double> delta = {2.0 * err * inv_n};
    for (std::size_t l = m.layers.size(); l-- > 0;) {
      const auto& L = m.layers[l];
      const auto& input = tr.h[l];
      double* g = grad.data() + offset[l];
      for (std::size_t o = 0; o < L.weights.rows; ++o) {
        for (std::size_t i = 0; i < L.weights.cols; ++i) g[o * L.weights.cols + i] += delta[o] * input[i];
        g[L.weights.data.size() + o] += delta[o];
      }
      if (l == 0) break;
      std::vector<double> prev(L.weights.cols, 0.0);
      for (std::size_t o = 0; o < L.weights.rows; ++o) {
        for (std::size_t i = 0; i < L.weights.cols; ++i) prev[i] += L.weights(o, i) * delta[o];
      }
      for (std::size_t i = 0; i < prev.size(); ++i) {
        prev[i] *= detail::activate_grad(m.activation, tr.z[l - 1][i], tr.h[l][i]);
      }
      delta = std::move(prev);
    }
  }
  return loss * inv_n;
}

inline double rmse_normalized(const MlpModel& m, const FeatureDataset& norm_ds) {
  if (norm_ds.size() == 0) return 0.0;
  std::vector<double> pred(norm_ds.size());
  for (std::size_t i = 0; i < norm_ds.size(); ++i) pred[i] = detail::forward(m, norm_ds.X.row(i));
  return rmse(pred, norm_ds.y);
}

/// Trains on `train`, early-stopping on `val` RMSE (training RMSE when `val`
/// is empty). Returns the parameters of the best validation epoch.
inline MlpModel train_mlp(const FeatureDataset& train, const FeatureDataset& val, const MlpHyper& hyper,
                          std::uint64_t seed) {
  if (train.size() == 0) throw Error(Errc::EmptyDataset, "train_mlp: empty training set");
  if (train.y.size() != train.size()) throw Error(Errc::DimensionMismatch, "train_mlp: training targets missing");
  if (val.size() > 0 && (val.X.cols != train.X.cols || val.y.size() != val.size())) {
    throw Error(Errc::DimensionMismatch, "train_mlp: validation set shape differs");
  }
  if (hyper.batch_size == 0 || hyper.max_epochs == 0 || !(hyper.learning_rate > 0.0)) {
    throw Error(Errc::InvalidConfig, "train_mlp: batch size, epochs and learning rate must be positive");
  }

  auto [tr, stats] = normalize(train);
  const FeatureDataset va = val.size() > 0 ? normalize(val, stats).first : FeatureDataset{};

  std::vector<std::size_t> sizes = {stats.kept_features.size()};
  sizes.insert(sizes.end(), hyper.hidden.begin(), hyper.hidden.end());
  sizes.push_back(1);
  MlpModel model = init_mlp(sizes, hyper.activation, seed);
  model.norm = stats;

  std::vector<double> params = flatten_parameters(model);
  std::vector<double> best_params = params;
  double best_val = INFINITY;
  std::size_t since_best = 0;

  Rng rng(derive_seed(seed, "batches"));
  std::vector<std::size_t> order(tr.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> grad;

  for (std::size_t epoch = 1; epoch <= hyper.max_epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    for (std::size_t b = 0; b < order.size(); b += hyper.batch_size) {
      const std::size_t e = std::min(order.size(), b + hyper.batch_size);
      const double loss =
          loss_and_gradient(model, tr.X, tr.y, std::span<const std::size_t>(order).subspan(b, e - b), grad);
      if (!std::isfinite(loss)) {
        throw Error(Errc::DivergenceDetected, "training loss became non-finite at epoch " + std::to_string(epoch));
      }
      for (std::size_t k = 0; k < params.size(); ++k) params[k] -= hyper.learning_rate * grad[k];
      assign_parameters(model, params);
    }
    const double train_rmse = rmse_normalized(model, tr);
    const double val_rmse = va.size() > 0 ? rmse_normalized(model, va) : train_rmse;
    if (!std::isfinite(train_rmse) || !std::isfinite(val_rmse)) {
      throw Error(Errc::DivergenceDetected, "training RMSE became non-finite at epoch " + std::to_string(epoch));
    }
    model.log.push_back({epoch, train_rmse, val_rmse});
    if (val_rmse < best_val) {
      best_val = val_rmse;
      best_params = params;
      model.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= hyper.patience) {
      break;
    }
  }
  assign_parameters(model, best_params);
  return model;
}

// ---------------------------------------------------------------------------
// Persistence

inline nlohmann::ordered_json mlp_to_json(const MlpModel& m) {
  nlohmann::ordered_json j;
  j["layer_sizes"] = m.layer_sizes;
  j["activation"] = to_string(m.activation);
  j["seed"] = m.seed;
  auto& layers = j["layers"] = nlohmann::ordered_json::array();
  for (const auto& l : m.layers) {
    layers.push_back({{"rows", l.weights.rows}, {"cols", l.weights.cols}, {"weights", l.weights.data}, {"bias", l.bias}});
  }
  j["norm_stats"] = {{"n_inputs", m.norm.n_inputs},
                     {"kept_features", m.norm.kept_features},
                     {"dropped_features", m.norm.dropped_features},
                     {"feature_mean", m.norm.feature_mean},
                     {"feature_std", m.norm.feature_std},
                     {"target_mean", m.norm.target_mean},
                     {"target_std", m.norm.target_std}};
  j["best_epoch"] = m.best_epoch;
  auto& log = j["training_log"] = nlohmann::ordered_json::array();
  for (const auto& e : m.log) log.push_back({{"epoch", e.epoch}, {"train_rmse", e.train_rmse}, {"val_rmse", e.val_rmse}});
  return j;
}

inline MlpModel mlp_from_json(const nlohmann::json& j) {
  try {
    MlpModel m;
    m.layer_sizes = j.at("layer_sizes").get<std::vector<std::size_t>>();
    m.activation = j.at("activation").get<std::string>() == "tanh" ? Activation::tanh : Activation::relu;
    m.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& jl : j.at("layers")) {
      DenseLayer l;
      l.weights.rows = jl.at("rows").get<std::size_t>();
      l.weights.cols = jl.at("cols").get<std::size_t>();
      l.weights.data = jl.at("weights").get<std::vector<double>>();
      l.bias = jl.at("bias").get<std::vector<double>>();
      if (l.weights.data.size() != l.weights.rows * l.weights.cols || l.bias.size() != l.weights.rows) {
        throw Error(Errc::ParseError, "model JSON: layer shape inconsistent");
      }
      m.layers.push_back(std::move(l));
    }
    const auto& ns = j.at("norm_stats");
    m.norm.n_inputs = ns.at("n_inputs").get<std::size_t>();
    m.norm.kept_features = ns.at("kept_features").get<std::vector<std::size_t>>();
    m.norm.dropped_features = ns.at("dropped_features").get<std::vector<std::string>>();
    m.norm.feature_mean = ns.at("feature_mean").get<std::vector<double>>();
    m.norm.feature_std = ns.at("feature_std").get<std::vector<double>>();
    m.norm.target_mean = ns.at("target_mean").get<double>();
    m.norm.target_std = ns.at("target_std").get<double>();
    m.best_epoch = j.value("best_epoch", std::size_t{0});
    if (j.contains("training_log")) {
      for (const auto& e : j.at("training_log")) {
        m.log.push_back({e.at("epoch").get<std::size_t>(), e.at("train_rmse").get<double>(), e.at("val_rmse").get<double>()});
      }
    }
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
      if (m.layers[l].weights.cols != m.layer_sizes[l] || m.layers[l].weights.rows != m.layer_sizes[l + 1]) {
        throw Error(Errc::ParseError, "model JSON: layer sizes do not chain");
      }
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ParseError, std::string("model JSON: ") + e.what());
  }
}

}  // namespace cropcast
