#pragma once

// Deterministic synthetic scenes for desk-scale runs of the whole pipeline.
//
// A scene is a production grid (10 km cells) plus NDVI and LST stacks on
// 10x finer grids, ET on a 20x finer grid and rainfall on a 5.55 km grid,
// at 16/8/30/8-day cadences. Inputs are smooth functions of position, year
// and day; NDVI follows a double-logistic season. Production on crop cells is
//
//   base_t * exp( sum_p coupling_p * (m_p - center_p) / scale_p ) + noise
//
// where m_p is the in-season mean of parameter p on the production grid,
// computed exactly as the feature builder does (area-weighted resampling,
// 16-day alignment, calendar window [sow_start, harvest_start]). Noise is
// Gaussian with standard deviation noise_sigma times the standard deviation
// of the noise-free signal over crop cells; results are clamped at 0.

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include "cropcast/csv.hpp"
#include "cropcast/error.hpp"
#include "cropcast/grid_io.hpp"
#include "cropcast/raster.hpp"
#include "cropcast/rng.hpp"
#include "cropcast/season_features.hpp"
#include "cropcast/tables.hpp"
#include "cropcast/timeseries.hpp"

namespace cropcast {

struct SynthConfig {
  std::uint64_t seed = 42;
  // Extent: production grid anchored at its north-west corner.
  double origin_lat = 12.0;
  double origin_lon = 2.0;
  std::size_t prod_rows = 30;
  std::size_t prod_cols = 30;
  int first_year = 2017;
  int last_year = 2020;
  double noise_sigma = 0.1;
  /// Coupling of production to the in-season mean of NDVI, LST, RAIN, ET.
  std::array<double, 4> coupling = {0.6, -0.25, 0.3, 0.35};
  double base_production_t = 5000.0;
  double crop_fraction = 0.8;  // share of cells growing the crop
  double cloud_fraction = 0.01;  // NDVI cells lost to nodata per frame
  std::string crop = "Maize";
  int sow_start = 145;
  int harvest_start = 273;

  [[nodiscard]] std::string problem() const {
    if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) return "noise_sigma must be finite and >= 0";
    if (prod_rows == 0 || prod_cols == 0) return "extent must be nonempty";
    if (last_year < first_year) return "last_year precedes first_year";
    if (!(crop_fraction > 0.0 && crop_fraction <= 1.0)) return "crop_fraction must lie in (0,1]";
    if (!(cloud_fraction >= 0.0 && cloud_fraction < 1.0)) return "cloud_fraction must lie in [0,1)";
    if (!(base_production_t > 0.0)) return "base_production_t must be positive";
    if (!DayRange{sow_start, harvest_start}.valid() || sow_start >= harvest_start) return "invalid season days";
    return {};
  }
};

/// Normalization of each parameter's season mean inside the production law.
inline constexpr std::array<double, 4> kSynthFeatureCenter = {0.45, 301.0, 70.0, 16.0};
inline constexpr std::array<double, 4> kSynthFeatureScale = {0.1, 2.0, 30.0, 5.0};

/// Noise-free production for a cell with the given in-season means
/// (NDVI, LST, RAIN, ET order).
inline double synthetic_production_signal(const SynthConfig& cfg, const std::array<double, 4>& season_means) {
  double s = 0.0;
  for (std::size_t p = 0; p < 4; ++p) {
    s += cfg.coupling[p] * (season_means[p] - kSynthFeatureCenter[p]) / kSynthFeatureScale[p];
  }
  return cfg.base_production_t * std::exp(s);
}

inline GridGeometry synthetic_production_grid(const SynthConfig& cfg) {
  return {cfg.origin_lat, cfg.origin_lon, 10.0 * kDegreesPerKm, cfg.prod_rows, cfg.prod_cols};
}

/// Native grid of `p` covering the production extent.
inline GridGeometry synthetic_native_grid(const SynthConfig& cfg, Parameter p) {
  const double ratio = 10.0 / native_resolution_km(p);
  auto cells = [&](std::size_t n) { return static_cast<std::size_t>(std::ceil(static_cast<double>(n) * ratio - 1e-9)); };
  return {cfg.origin_lat, cfg.origin_lon, native_resolution_km(p) * kDegreesPerKm, cells(cfg.prod_rows),
          cells(cfg.prod_cols)};
}

inline SeasonWindow synthetic_season_window(const SynthConfig& cfg) {
  return {cfg.sow_start, cfg.harvest_start, WindowSource::calendar};
}

inline const char* synthetic_units(Parameter p) {
  switch (p) {
    case Parameter::NDVI: return "NDVI";
    case Parameter::LST_DAY: return "K";
    case Parameter::RAIN: return "mm/month";
    case Parameter::ET: return "mm/8day";
    case Parameter::PRODUCTION: return "t";
  }
  return "";
}

namespace detail {

/// Smooth field on the unit square: a few seeded plane waves, range ~[-1, 1].
class SmoothField {
 public:
  SmoothField(std::uint64_t seed, int waves = 3) {
    Rng rng(seed);
    for (int k = 0; k < waves; ++k) {
      waves_.push_back({rng.uniform(0.3, 1.6), rng.uniform(0.3, 1.6), rng.uniform(0.0, 2.0 * std::numbers::pi),
                        rng.uniform(0.5, 1.0) / waves});
    }
  }
  [[nodiscard]] double operator()(double u, double v) const {
    double s = 0.0;
    for (const auto& w : waves_) s += w.amp * std::sin(2.0 * std::numbers::pi * (w.fu * u + w.fv * v) + w.phase);
    return s;
  }

 private:
  struct Wave {
    double fu, fv, phase, amp;
  };
  std::vector<Wave> waves_;
};

inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Biophysical state of one location in one year.
struct SiteYear {
  double sos, eos, base, amp, heat, wet;
};

class SceneModel {
 public:
  SceneModel(const SynthConfig& cfg, int year)
      : prod_(synthetic_production_grid(cfg)),
        vigor_(derive_seed(cfg.seed, "field:vigor")),
        wet_(derive_seed(cfg.seed, "field:wet")),
        heat_(derive_seed(cfg.seed, "field:heat")),
        year_shift_(derive_seed(cfg.seed, "year:" + std::to_string(year)), 2) {
    Rng rng(derive_seed(cfg.seed, "anomaly:" + std::to_string(year)));
    anomaly_ = {rng.normal(), rng.normal(), rng.normal()};
  }

  [[nodiscard]] SiteYear site(double lat, double lon) const {
    const double height = prod_.cell_size_deg * static_cast<double>(prod_.n_rows);
    const double width = prod_.cell_size_deg * static_cast<double>(prod_.n_cols);
    const double u = (lon - prod_.origin_lon) / width;
    const double v = (prod_.origin_lat - lat) / height;
    const double ys = year_shift_(u, v);
    const double heat = heat_(u, v) + 0.3 * anomaly_[0];
    const double wet = wet_(u, v) + 0.3 * anomaly_[1] + 0.3 * ys;
    const double vig = vigor_(u, v) + 0.25 * anomaly_[2] - 0.2 * ys;
    SiteYear s{};
    s.sos = 130.0 + 12.0 * heat - 6.0 * wet;
    s.eos = s.sos + 115.0 + 10.0 * wet;
    s.base = 0.16 + 0.03 * wet;
    s.amp = 0.42 + 0.12 * vig + 0.08 * wet;
    s.heat = heat;
    s.wet = wet;
    return s;
  }

  [[nodiscard]] static double ndvi(const SiteYear& s, double day) {
    return s.base + s.amp * (logistic((day - s.sos) / 8.0) - logistic((day - s.eos) / 12.0));
  }

  [[nodiscard]] static double value(Parameter p, const SiteYear& s, double day) {
    const double green = ndvi(s, day) - s.base;
    switch (p) {
      case Parameter::NDVI: return ndvi(s, day);
      case Parameter::LST_DAY:
        return 303.0 + 5.0 * std::sin(2.0 * std::numbers::pi * (day - 80.0) / 365.0) + 2.5 * s.heat - 9.0 * green;
      case Parameter::RAIN: {
        const double peak = (day - (s.sos + 35.0)) / 50.0;
        return 6.0 + 150.0 * (1.0 + 0.35 * s.wet) * std::exp(-peak * peak);
      }
      case Parameter::ET: return 8.0 + 30.0 * green * (0.85 + 0.15 * s.wet);
      case Parameter::PRODUCTION: return 0.0;
    }
    return 0.0;
  }

 private:
  GridGeometry prod_;
  SmoothField vigor_, wet_, heat_, year_shift_;
  std::array<double, 3> anomaly_{};
};

}  // namespace detail

/// Native-resolution stack of `p` for one year. Frame values are sampled at
/// the middle of each compositing period.
inline TimeSeriesStack synthetic_stack(const SynthConfig& cfg, Parameter p, int year) {
  const detail::SceneModel model(cfg, year);
  const GridGeometry g = synthetic_native_grid(cfg, p);
  TimeSeriesStack st;
  st.parameter = p;
  st.cadence_days = native_cadence_days(p);
  st.start_day_of_year = 1;
  st.year = year;

  std::vector<detail::SiteYear> sites(g.size());
  for (std::size_t r = 0; r < g.n_rows; ++r) {
    for (std::size_t c = 0; c < g.n_cols; ++c) sites[r * g.n_cols + c] = model.site(g.cell_center_lat(r), g.cell_center_lon(c));
  }
  Rng clouds(derive_seed(cfg.seed, "clouds:" + std::string(to_string(p)) + ":" + std::to_string(year)));
  const bool cloudy = p == Parameter::NDVI && cfg.cloud_fraction > 0.0;
  for (int day = 1; day <= 365; day += st.cadence_days) {
    const double mid = day + (st.cadence_days - 1) / 2.0;
    GridRaster f(g, 0.0, kDefaultNodata, synthetic_units(p));
    for (std::size_t i = 0; i < f.values.size(); ++i) {
      f.values[i] = detail::SceneModel::value(p, sites[i], mid);
      if (cloudy && clouds.uniform() < cfg.cloud_fraction) f.values[i] = f.nodata;
    }
    st.frames.push_back(std::move(f));
  }
  return st;
}

/// Default resampling method of each input onto the analysis grid.
inline ResampleMethod default_resample_method(Parameter) { return ResampleMethod::area_weighted; }

/// Resamples every frame onto `grid` and aligns the stack to `cadence_days`.
inline TimeSeriesStack to_analysis_grid(const TimeSeriesStack& native, const GridGeometry& grid, int cadence_days,
                                        ResampleMethod method) {
  TimeSeriesStack st = native;
  for (auto& f : st.frames) f = resample(f, grid, method);
  return align_cadence(st, cadence_days);
}

/// Cells growing the crop: a seeded smooth field above its (1 - crop_fraction) quantile.
inline CropMask synthetic_cropland(const SynthConfig& cfg) {
  const GridGeometry g = synthetic_production_grid(cfg);
  const detail::SmoothField field(derive_seed(cfg.seed, "field:cropland"), 4);
  std::vector<double> score(g.size());
  for (std::size_t r = 0; r < g.n_rows; ++r) {
    for (std::size_t c = 0; c < g.n_cols; ++c) {
      score[r * g.n_cols + c] = field((static_cast<double>(c) + 0.5) / static_cast<double>(g.n_cols),
                                      (static_cast<double>(r) + 0.5) / static_cast<double>(g.n_rows));
    }
  }
  std::vector<double> sorted = score;
  std::sort(sorted.begin(), sorted.end());
  const auto k = static_cast<std::size_t>(std::floor((1.0 - cfg.crop_fraction) * static_cast<double>(g.size())));
  const double cut = k == 0 ? -INFINITY : sorted[k - 1];
  CropMask m{g, std::vector<std::uint8_t>(g.size(), 0)};
  for (std::size_t i = 0; i < g.size(); ++i) m.cells[i] = score[i] > cut ? 1 : 0;
  return m;
}

struct SceneYear {
  int year = 0;
  StackSet stacks;  // native resolution
  GridRaster production;
};

/// Production raster of `year` given that year's native stacks.
inline GridRaster synthetic_production(const SynthConfig& cfg, const StackSet& native, int year) {
  const GridGeometry g = synthetic_production_grid(cfg);
  StackSet analysis;
  for (auto p : kInputParameters) {
    analysis[p] = to_analysis_grid(native.at(p), g, kDefaultAnalysisCadenceDays, default_resample_method(p));
  }
  const CropMask cropland = synthetic_cropland(cfg);
  const FeatureDataset ds =
      build_feature_vectors(analysis, nullptr, cropland, synthetic_season_window(cfg), {Aggregate::mean});

  GridRaster prod(g, 0.0, kDefaultNodata, "t");
  std::vector<double> signal(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto row = ds.X.row(i);
    signal[i] = synthetic_production_signal(cfg, {row[0], row[1], row[2], row[3]});
  }
  double sd = 0.0;
  if (!signal.empty()) {
    double mean = 0.0;
    for (double s : signal) mean += s;
    mean /= static_cast<double>(signal.size());
    for (double s : signal) sd += (s - mean) * (s - mean);
    sd = std::sqrt(sd / static_cast<double>(signal.size()));
  }
  Rng noise(derive_seed(cfg.seed, "noise:" + std::to_string(year)));
  for (std::size_t i = 0; i < ds.size(); ++i) {
    double v = signal[i];
    if (cfg.noise_sigma > 0.0) v = std::max(0.0, v + cfg.noise_sigma * sd * noise.normal());
    prod.at(ds.pixel_index[i].row, ds.pixel_index[i].col) = v;
  }
  return prod;
}

inline SceneYear generate_scene_year(const SynthConfig& cfg, int year) {
  if (const auto p = cfg.problem(); !p.empty()) throw Error(Errc::InvalidConfig, "synth: " + p);
  SceneYear sy;
  sy.year = year;
  for (auto p : kInputParameters) sy.stacks[p] = synthetic_stack(cfg, p, year);
  sy.production = synthetic_production(cfg, sy.stacks, year);
  return sy;
}

struct SyntheticScene {
  std::vector<SceneYear> years;
  ZoneMap zones;
  std::map<int, ZoneName> zone_names;
  std::vector<CropCalendarEntry> calendar;
};

/// Three countries in two regions, split by wavy north-south borders.
inline std::map<int, ZoneName> synthetic_zone_names() {
  return {{1, {"Avalon", "West"}}, {2, {"Borduria", "West"}}, {3, {"Carpania", "East"}}};
}

inline ZoneMap synthetic_zones(const SynthConfig& cfg) {
  const GridGeometry g = synthetic_production_grid(cfg);
  ZoneMap z{g, std::vector<int>(g.size(), 0)};
  for (std::size_t r = 0; r < g.n_rows; ++r) {
    const double v = (static_cast<double>(r) + 0.5) / static_cast<double>(g.n_rows);
    for (std::size_t c = 0; c < g.n_cols; ++c) {
      const double u = (static_cast<double>(c) + 0.5) / static_cast<double>(g.n_cols) +
                       0.06 * std::sin(2.0 * std::numbers::pi * 1.5 * v);
      z.zone_ids[r * g.n_cols + c] = 1 + static_cast<int>(std::clamp(std::floor(3.0 * u), 0.0, 2.0));
    }
  }
  return z;
}

inline std::vector<CropCalendarEntry> synthetic_calendar(const SynthConfig& cfg) {
  std::vector<CropCalendarEntry> out;
  for (const auto& [id, name] : synthetic_zone_names()) {
    out.push_back({name.country, cfg.crop, {cfg.sow_start, cfg.sow_start + 30},
                   {cfg.sow_start + 30, cfg.harvest_start - 1}, {cfg.harvest_start, std::min(366, cfg.harvest_start + 45)}});
  }
  return out;
}

/// Five years of balances per synthetic country: the configured crop is
/// the top staple, with a dozen other commodities around it.
inline std::string synthetic_balances_csv(const SynthConfig& cfg) {
  static const std::vector<std::string> kOthers = {"Cassava and products", "Rice and products", "Sorghum and products",
                                                   "Millet and products",  "Yams",              "Groundnuts (Shelled Eq)",
                                                   "Vegetables, Other",    "Milk - Excluding Butter", "Sugar cane",
                                                   "Bananas",              "Beer",              "Pulses, Other and products"};
  std::string out = "country,commodity,year,production_t,consumption_t\n";
  for (const auto& [id, name] : synthetic_zone_names()) {
    Rng rng(derive_seed(cfg.seed, "balances:" + name.country));
    auto emit = [&](const std::string& commodity, double prod, double self_suff) {
      for (int year = 2014; year <= 2018; ++year) {
        const double p = std::round(prod * rng.uniform(0.9, 1.1));
        const double c = std::round(p * self_suff * rng.uniform(0.97, 1.03));
        out += csv::join({name.country, commodity, std::to_string(year), csv::format_double(p), csv::format_double(c)}) + "\n";
      }
    };
    emit(cfg.crop, 2.0e6, 1.3);
    for (const auto& other : kOthers) emit(other, rng.uniform(1.0e5, 3.0e6), rng.uniform(0.6, 1.2));
  }
  return out;
}

inline SyntheticScene generate_synthetic_scene(const SynthConfig& cfg) {
  if (const auto p = cfg.problem(); !p.empty()) throw Error(Errc::InvalidConfig, "synth: " + p);
  SyntheticScene scene;
  for (int y = cfg.first_year; y <= cfg.last_year; ++y) scene.years.push_back(generate_scene_year(cfg, y));
  scene.zones = synthetic_zones(cfg);
  scene.zone_names = synthetic_zone_names();
  scene.calendar = synthetic_calendar(cfg);
  return scene;
}

inline GridRaster zones_to_raster(const ZoneMap& z) {
  GridRaster r(z.geo, 0.0, kDefaultNodata, "zone_id");
  for (std::size_t i = 0; i < z.zone_ids.size(); ++i) r.values[i] = static_cast<double>(z.zone_ids[i]);
  return r;
}

inline ZoneMap zones_from_raster(const GridRaster& r) {
  ZoneMap z{r.geo, std::vector<int>(r.values.size(), 0)};
  for (std::size_t i = 0; i < r.values.size(); ++i) {
    if (r.values[i] != r.nodata) z.zone_ids[i] = static_cast<int>(std::lround(r.values[i]));
  }
  return z;
}

inline std::string zone_names_csv(const std::map<int, ZoneName>& names) {
  std::string out = "zone_id,country,region\n";
  for (const auto& [id, n] : names) out += csv::join({std::to_string(id), n.country, n.region}) + "\n";
  return out;
}

/// Writes the scene one year at a time:
///   stacks/<PARAM>_<year>_<doy>.grdh  native input frames
///   stacks/PRODUCTION_<year>_001.grdh production of each year
///   zones.grdh, zones.csv, calendar.csv, balances.csv, regions.csv
inline void write_synthetic_scene(const SynthConfig& cfg, const std::filesystem::path& dir) {
  if (const auto p = cfg.problem(); !p.empty()) throw Error(Errc::InvalidConfig, "synth: " + p);
  std::filesystem::create_directories(dir / "stacks");
  for (int y = cfg.first_year; y <= cfg.last_year; ++y) {
    const SceneYear sy = generate_scene_year(cfg, y);
    for (const auto& [p, st] : sy.stacks) write_stack(st, dir / "stacks");
    write_grid(sy.production, dir / "stacks" / (frame_stem(Parameter::PRODUCTION, y, 1) + ".grdh"),
               LayerTag{"PRODUCTION", y, 1});
  }
  const auto names = synthetic_zone_names();
  write_grid(zones_to_raster(synthetic_zones(cfg)), dir / "zones.grdh", LayerTag{"ZONES", 0, 0});
  csv::write_file((dir / "zones.csv").string(), zone_names_csv(names));
  csv::write_file((dir / "calendar.csv").string(), calendar_csv(synthetic_calendar(cfg)));
  csv::write_file((dir / "balances.csv").string(), synthetic_balances_csv(cfg));
  std::string regions = "country,region\n";
  for (const auto& [id, n] : names) regions += csv::join({n.country, n.region}) + "\n";
  csv::write_file((dir / "regions.csv").string(), regions);
}

}  // namespace cropcast
