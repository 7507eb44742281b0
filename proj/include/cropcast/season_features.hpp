#pragma once

// From raw stacks to per-pixel seasonal feature vectors: temporal
// re-sampling onto a common cadence, greenness-onset detection, season
// windows and the aggregate feature table.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cropcast/csv.hpp"
#include "cropcast/error.hpp"
#include "cropcast/matrix.hpp"
#include "cropcast/raster.hpp"
#include "cropcast/tables.hpp"
#include "cropcast/timeseries.hpp"

namespace cropcast {

inline constexpr int kDefaultAnalysisCadenceDays = 16;

/// Re-samples a stack onto `target_cadence_days` by per-pixel linear
/// interpolation in time. The output grid starts at the first frame and
/// covers the last frame's compositing period (last day + cadence - 1);
/// target days past the last frame take its value. A sample is nodata when
/// either bracketing source frame is nodata at that pixel.
inline TimeSeriesStack align_cadence(const TimeSeriesStack& stack, int target_cadence_days) {
  if (stack.frames.empty()) throw Error(Errc::EmptyStack, "align_cadence: empty stack");
  if (target_cadence_days < 1) throw Error(Errc::InvalidConfig, "align_cadence: cadence must be >= 1");
  stack.validate();

  TimeSeriesStack out;
  out.parameter = stack.parameter;
  out.cadence_days = target_cadence_days;
  out.start_day_of_year = stack.start_day_of_year;
  out.year = stack.year;

  const int first = stack.start_day_of_year;
  const int last = stack.day_of_frame(stack.frames.size() - 1);
  const int range_end = last + stack.cadence_days - 1;
  for (int t = first; t <= range_end; t += target_cadence_days) {
    if (t >= last) {
      out.frames.push_back(stack.frames.back());
      continue;
    }
    const auto k = static_cast<std::size_t>((t - first) / stack.cadence_days);
    const int offset = t - stack.day_of_frame(k);
    if (offset == 0) {
      out.frames.push_back(stack.frames[k]);
      continue;
    }
    const double w = static_cast<double>(offset) / static_cast<double>(stack.cadence_days);
    const GridRaster& a = stack.frames[k];
    const GridRaster& b = stack.frames[k + 1];
    GridRaster f = a;
    for (std::size_t i = 0; i < f.values.size(); ++i) {
      const double va = a.values[i];
      const double vb = b.values[i];
      f.values[i] = (va == a.nodata || vb == b.nodata) ? a.nodata : va + (vb - va) * w;
    }
    out.frames.push_back(std::move(f));
  }
  return out;
}

inline constexpr double kOnsetAmplitudeFraction = 0.2;
inline constexpr double kOnsetMinAmplitude = 0.05;

/// First date where NDVI rises through base + 0.2 * (max - base), base being
/// the mean of the two lowest values. No onset when the amplitude is below
/// 0.05 or the series never crosses from below.
inline std::optional<int> detect_greenness_onset(std::span<const double> ndvi, std::span<const int> days) {
  if (ndvi.size() != days.size()) throw Error(Errc::LengthMismatch, "onset: series and dates differ in length");
  if (ndvi.size() < 3) throw Error(Errc::EmptyInput, "onset: need at least 3 observations");

  std::vector<double> sorted(ndvi.begin(), ndvi.end());
  std::partial_sort(sorted.begin(), sorted.begin() + 2, sorted.end());
  const double base = (sorted[0] + sorted[1]) / 2.0;
  const double peak = *std::max_element(ndvi.begin(), ndvi.end());
  const double amplitude = peak - base;
  if (amplitude < kOnsetMinAmplitude) return std::nullopt;

  const double threshold = base + kOnsetAmplitudeFraction * amplitude;
  for (std::size_t i = 1; i < ndvi.size(); ++i) {
    if (ndvi[i - 1] < threshold && ndvi[i] >= threshold) return days[i];
  }
  return std::nullopt;
}

/// Per-frame mean of the valid, masked pixels (optionally restricted to one
/// zone). Frames without any such pixel are skipped along with their dates.
inline std::pair<std::vector<double>, std::vector<int>> masked_mean_profile(const TimeSeriesStack& stack,
                                                                            const CropMask& mask,
                                                                            const ZoneMap* zones = nullptr,
                                                                            int zone_id = 0) {
  stack.validate();
  detail::require_same_grid(stack.geometry(), mask.geo, "masked_mean_profile: stack and mask differ");
  std::vector<double> series;
  std::vector<int> days;
  for (std::size_t k = 0; k < stack.frames.size(); ++k) {
    const auto& f = stack.frames[k];
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < f.values.size(); ++i) {
      if (!mask[i] || f.values[i] == f.nodata) continue;
      if (zones && zones->zone_ids[i] != zone_id) continue;
      sum += f.values[i];
      ++n;
    }
    if (n == 0) continue;
    series.push_back(sum / static_cast<double>(n));
    days.push_back(stack.day_of_frame(k));
  }
  return {std::move(series), std::move(days)};
}

enum class WindowSource { calendar, detected_onset };

struct SeasonWindow {
  int start_day = 1;
  int end_day = 366;
  WindowSource source = WindowSource::calendar;

  [[nodiscard]] bool contains(int day) const noexcept { return DayRange{start_day, end_day}.contains(day); }
};

/// Season from sowing (or a later detected onset) up to the start of harvest.
/// An onset that falls outside the calendar season is ignored.
inline SeasonWindow resolve_window(const CropCalendarEntry& cal, std::optional<int> onset) {
  SeasonWindow w{cal.sowing.start, cal.harvest.start, WindowSource::calendar};
  if (onset && *onset > w.start_day && DayRange{cal.sowing.start, cal.harvest.start}.contains(*onset)) {
    w.start_day = *onset;
    w.source = WindowSource::detected_onset;
  }
  return w;
}

enum class Aggregate { mean, max, sum, min, stddev };

inline constexpr std::string_view to_string(Aggregate a) noexcept {
  switch (a) {
    case Aggregate::mean: return "mean";
    case Aggregate::max: return "max";
    case Aggregate::sum: return "sum";
    case Aggregate::min: return "min";
    case Aggregate::stddev: return "std";
  }
  return "?";
}

inline std::optional<Aggregate> parse_aggregate(std::string_view s) noexcept {
  for (auto a : {Aggregate::mean, Aggregate::max, Aggregate::sum, Aggregate::min, Aggregate::stddev}) {
    if (s == to_string(a)) return a;
  }
  return std::nullopt;
}

inline const std::vector<Aggregate>& default_aggregates() {
  static const std::vector<Aggregate> kDefault = {Aggregate::mean, Aggregate::max, Aggregate::sum};
  return kDefault;
}

struct PixelIndex {
  std::size_t row = 0;
  std::size_t col = 0;

  friend bool operator==(const PixelIndex&, const PixelIndex&) = default;
};

/// Samples in rows of `X`. `y` is empty for prediction-only datasets.
struct FeatureDataset {
  std::vector<std::string> feature_names;
  Matrix X;
  std::vector<double> y;
  std::vector<PixelIndex> pixel_index;

  [[nodiscard]] std::size_t size() const noexcept { return X.rows; }
  [[nodiscard]] bool has_target() const noexcept { return !y.empty() || X.rows == 0; }

  [[nodiscard]] FeatureDataset subset(std::span<const std::size_t> idx) const {
    FeatureDataset out;
    out.feature_names = feature_names;
    out.X = X.select_rows(idx);
    out.X.cols = X.cols;
    for (auto i : idx) {
      if (!y.empty()) out.y.push_back(y[i]);
      out.pixel_index.push_back(pixel_index[i]);
    }
    return out;
  }

  void append(const FeatureDataset& other) {
    if (feature_names.empty()) {
      feature_names = other.feature_names;
      X.cols = other.X.cols;
    }
    if (other.feature_names != feature_names) throw Error(Errc::DimensionMismatch, "datasets differ in features");
    X.data.insert(X.data.end(), other.X.data.begin(), other.X.data.end());
    X.rows += other.X.rows;
    y.insert(y.end(), other.y.begin(), other.y.end());
    pixel_index.insert(pixel_index.end(), other.pixel_index.begin(), other.pixel_index.end());
  }
};

using StackSet = std::map<Parameter, TimeSeriesStack>;

inline std::vector<std::string> feature_names(const std::vector<Aggregate>& aggregates) {
  std::vector<std::string> names;
  for (auto p : kInputParameters) {
    for (auto a : aggregates) names.push_back(std::string(to_string(p)) + "_" + std::string(to_string(a)));
  }
  return names;
}

/// One sample per mask-true pixel whose production (when given) and every
/// in-window frame value of every input stack are valid. Features are the
/// in-window aggregates per parameter, in canonical parameter order.
/// `zones`/`zone_id` optionally restrict samples to one zone.
inline FeatureDataset build_feature_vectors(const StackSet& stacks, const GridRaster* production,
                                            const CropMask& mask, const SeasonWindow& window,
                                            const std::vector<Aggregate>& aggregates = default_aggregates(),
                                            const ZoneMap* zones = nullptr, int zone_id = 0) {
  if (production) detail::require_same_grid(production->geo, mask.geo, "features: production and mask differ");
  if (zones) detail::require_same_grid(zones->geo, mask.geo, "features: zones and mask differ");

  std::vector<std::vector<const GridRaster*>> windowed;
  for (auto p : kInputParameters) {
    const auto it = stacks.find(p);
    if (it == stacks.end()) throw Error(Errc::EmptyStack, "features: missing " + std::string(to_string(p)) + " stack");
    const auto& stack = it->second;
    stack.validate();
    detail::require_same_grid(stack.geometry(), mask.geo,
                              "features: " + std::string(to_string(p)) + " stack not on the analysis grid");
    std::vector<const GridRaster*> frames;
    for (std::size_t k = 0; k < stack.frames.size(); ++k) {
      if (window.contains(stack.day_of_frame(k))) frames.push_back(&stack.frames[k]);
    }
    if (frames.empty()) {
      throw Error(Errc::EmptyWindow, std::string(to_string(p)) + " has no frames in days " +
                                         std::to_string(window.start_day) + ".." + std::to_string(window.end_day));
    }
    windowed.push_back(std::move(frames));
  }

  FeatureDataset ds;
  ds.feature_names = feature_names(aggregates);
  ds.X.cols = ds.feature_names.size();
  std::vector<double> row(ds.X.cols);
  const GridGeometry& g = mask.geo;
  for (std::size_t r = 0; r < g.n_rows; ++r) {
    for (std::size_t c = 0; c < g.n_cols; ++c) {
      const std::size_t i = r * g.n_cols + c;
      if (!mask[i]) continue;
      if (zones && zones->zone_ids[i] != zone_id) continue;
      if (production && production->values[i] == production->nodata) continue;

      bool complete = true;
      std::size_t col = 0;
      for (const auto& frames : windowed) {
        double sum = 0.0, hi = -INFINITY, lo = INFINITY;
        for (const GridRaster* f : frames) {
          const double v = f->values[i];
          if (v == f->nodata) {
            complete = false;
            break;
          }
          sum += v;
          hi = std::max(hi, v);
          lo = std::min(lo, v);
        }
        if (!complete) break;
        const double n = static_cast<double>(frames.size());
        const double mean = sum / n;
        for (auto a : aggregates) {
          switch (a) {
            case Aggregate::mean: row[col++] = mean; break;
            case Aggregate::max: row[col++] = hi; break;
            case Aggregate::sum: row[col++] = sum; break;
            case Aggregate::min: row[col++] = lo; break;
            case Aggregate::stddev: {
              double ss = 0.0;
              for (const GridRaster* f : frames) ss += (f->values[i] - mean) * (f->values[i] - mean);
              row[col++] = std::sqrt(ss / n);
              break;
            }
          }
        }
      }
      if (!complete) continue;
      ds.X.append_row(row);
      if (production) ds.y.push_back(production->values[i]);
      ds.pixel_index.push_back({r, c});
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Dataset CSV: header is the feature names followed by y,row,col.

inline std::string dataset_csv(const FeatureDataset& ds) {
  csv::Row header = ds.feature_names;
  header.insert(header.end(), {"y", "row", "col"});
  std::string out = csv::join(header) + "\n";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (double v : ds.X.row(i)) out += csv::format_double(v) + ",";
    out += (ds.y.empty() ? std::string() : csv::format_double(ds.y[i])) + "," +
           std::to_string(ds.pixel_index[i].row) + "," + std::to_string(ds.pixel_index[i].col) + "\n";
  }
  return out;
}

inline void write_dataset(const FeatureDataset& ds, const std::string& path) {
  csv::write_file(path, dataset_csv(ds));
}

inline FeatureDataset read_dataset(const std::string& path) {
  const auto t = csv::read_table(path);
  if (t.header.size() < 3 || t.header[t.header.size() - 3] != "y" || t.header[t.header.size() - 2] != "row" ||
      t.header.back() != "col") {
    throw Error(Errc::ParseError, path + ": dataset header must end with y,row,col");
  }
  FeatureDataset ds;
  const std::size_t d = t.header.size() - 3;
  ds.feature_names.assign(t.header.begin(), t.header.begin() + static_cast<std::ptrdiff_t>(d));
  ds.X.cols = d;
  std::vector<double> row(d);
  bool any_y = false, any_blank = false;
  for (const auto& r : t.rows) {
    for (std::size_t j = 0; j < d; ++j) row[j] = csv::to_double(r[j], ds.feature_names[j]);
    ds.X.append_row(row);
    if (r[d].empty()) {
      any_blank = true;
    } else {
      any_y = true;
      ds.y.push_back(csv::to_double(r[d], "y"));
    }
    ds.pixel_index.push_back({static_cast<std::size_t>(csv::to_int(r[d + 1], "row")),
                              static_cast<std::size_t>(csv::to_int(r[d + 2], "col"))});
  }
  if (any_y && any_blank) throw Error(Errc::ParseError, path + ": y column partially blank");
  return ds;
}

}  // namespace cropcast
