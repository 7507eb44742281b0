#pragma once

// End-to-end orchestration driven by one TOML file. Each stage reads its
// inputs from disk and writes its artifacts under the output directory, so a
// stage run on its own (CLI subcommand) produces the same bytes as inside a
// full run. Stage seeds are derive_seed(root_seed, stage name).

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>
#include <toml.hpp>

#include "cropcast/crop_selection.hpp"
#include "cropcast/csv.hpp"
#include "cropcast/error.hpp"
#include "cropcast/forest.hpp"
#include "cropcast/grid_io.hpp"
#include "cropcast/mlp.hpp"
#include "cropcast/raster.hpp"
#include "cropcast/report.hpp"
#include "cropcast/rng.hpp"
#include "cropcast/season_features.hpp"
#include "cropcast/synth.hpp"
#include "cropcast/tables.hpp"

namespace cropcast {

namespace fs = std::filesystem;

struct PipelinePaths {
  fs::path scene_dir;   // native frames <PARAM>_<year>_<doy>.grdh, incl. PRODUCTION
  fs::path balances;
  fs::path regions;
  fs::path calendar;
  fs::path zones;       // zone raster header; names in `zone_names`
  fs::path zone_names;
  fs::path output_dir;
};

struct PipelineConfig {
  fs::path config_path;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  PipelinePaths paths;

  std::string crop = "Maize";
  int baseline_year = 2017;
  int target_year = 2020;
  int asof_day = 193;
  int cadence_days = kDefaultAnalysisCadenceDays;
  double mask_threshold = 0.0;
  std::vector<Aggregate> aggregates = default_aggregates();
  std::map<Parameter, ResampleMethod> resample = {{Parameter::NDVI, ResampleMethod::area_weighted},
                                                  {Parameter::LST_DAY, ResampleMethod::area_weighted},
                                                  {Parameter::RAIN, ResampleMethod::area_weighted},
                                                  {Parameter::ET, ResampleMethod::area_weighted}};

  ForestParams forest;
  bool forecast_per_pixel = false;

  MlpHyper mlp;
  bool per_country = true;
  std::size_t min_country_samples = 20;

  SplitSpec split;
  RegionalSelectionRule selection;

  [[nodiscard]] std::uint64_t stage_seed(std::string_view stage) const { return derive_seed(seed, stage); }
  [[nodiscard]] fs::path out(const std::string& name) const { return paths.output_dir / name; }
};

// ---------------------------------------------------------------------------
// Configuration

namespace detail {

inline fs::path resolve(const fs::path& base, std::string_view p) {
  fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

template <typename T>
T toml_get(const toml::table& t, std::string_view dotted, T fallback) {
  if (const auto node = t.at_path(dotted)) {
    if constexpr (std::is_same_v<T, double>) {
      if (auto v = node.value<double>()) return *v;
    } else if constexpr (std::is_same_v<T, bool>) {
      if (auto v = node.value<bool>()) return *v;
    } else if constexpr (std::is_integral_v<T>) {
      if (auto v = node.value<std::int64_t>()) return static_cast<T>(*v);
    } else {
      if (auto v = node.value<std::string>()) return *v;
    }
    throw Error(Errc::InvalidConfig, "config key '" + std::string(dotted) + "' has the wrong type");
  }
  return fallback;
}

}  // namespace detail

/// Parses the TOML text. Relative paths resolve against `base_dir`.
inline PipelineConfig parse_config(std::string_view text, const fs::path& base_dir) {
  toml::table t;
  try {
    t = toml::parse(text);
  } catch (const toml::parse_error& e) {
    throw Error(Errc::InvalidConfig, std::string("TOML: ") + std::string(e.description()));
  }
  using detail::toml_get;
  PipelineConfig c;
  c.seed = toml_get<std::uint64_t>(t, "seed", 0);
  c.threads = toml_get<std::size_t>(t, "threads", 1);

  auto path = [&](std::string_view key, std::string_view fallback) {
    return detail::resolve(base_dir, toml_get<std::string>(t, key, std::string(fallback)));
  };
  c.paths.scene_dir = path("paths.scene_dir", "scene/stacks");
  c.paths.balances = path("paths.balances", "scene/balances.csv");
  c.paths.regions = path("paths.regions", "scene/regions.csv");
  c.paths.calendar = path("paths.calendar", "scene/calendar.csv");
  c.paths.zones = path("paths.zones", "scene/zones.grdh");
  c.paths.zone_names = path("paths.zone_names", "scene/zones.csv");
  c.paths.output_dir = path("paths.output_dir", "out");

  c.crop = toml_get<std::string>(t, "analysis.crop", c.crop);
  c.baseline_year = toml_get<int>(t, "analysis.baseline_year", c.baseline_year);
  c.target_year = toml_get<int>(t, "analysis.target_year", c.target_year);
  c.asof_day = toml_get<int>(t, "analysis.asof_day", c.asof_day);
  c.cadence_days = toml_get<int>(t, "analysis.cadence_days", c.cadence_days);
  c.mask_threshold = toml_get<double>(t, "analysis.mask_threshold", c.mask_threshold);
  if (const auto* arr = t.at_path("analysis.aggregates").as_array()) {
    c.aggregates.clear();
    for (const auto& node : *arr) {
      const auto name = node.value<std::string>();
      const auto agg = name ? parse_aggregate(*name) : std::nullopt;
      if (!agg) throw Error(Errc::InvalidConfig, "analysis.aggregates: unknown aggregate");
      c.aggregates.push_back(*agg);
    }
  }
  for (auto p : kInputParameters) {
    const std::string key = "resample." + std::string(to_string(p));
    const auto method = toml_get<std::string>(t, key, "");
    if (method.empty()) continue;
    if (method == "nearest") c.resample[p] = ResampleMethod::nearest;
    else if (method == "area_weighted") c.resample[p] = ResampleMethod::area_weighted;
    else throw Error(Errc::InvalidConfig, key + ": expected nearest or area_weighted");
  }

  c.forest.n_trees = toml_get<std::size_t>(t, "forecast.n_trees", c.forest.n_trees);
  c.forest.max_depth = toml_get<std::size_t>(t, "forecast.max_depth", c.forest.max_depth);
  c.forest.min_leaf = toml_get<std::size_t>(t, "forecast.min_leaf", c.forest.min_leaf);
  c.forest.bootstrap = toml_get<bool>(t, "forecast.bootstrap", c.forest.bootstrap);
  c.forecast_per_pixel = toml_get<bool>(t, "forecast.per_pixel", c.forecast_per_pixel);
  c.forest.threads = c.threads;

  if (const auto* arr = t.at_path("model.hidden").as_array()) {
    c.mlp.hidden.clear();
    for (const auto& node : *arr) {
      const auto v = node.value<std::int64_t>();
      if (!v || *v < 1) throw Error(Errc::InvalidConfig, "model.hidden: layer widths must be positive integers");
      c.mlp.hidden.push_back(static_cast<std::size_t>(*v));
    }
  }
  const auto act = toml_get<std::string>(t, "model.activation", "relu");
  if (act != "relu" && act != "tanh") throw Error(Errc::InvalidConfig, "model.activation: expected relu or tanh");
  c.mlp.activation = act == "tanh" ? Activation::tanh : Activation::relu;
  c.mlp.learning_rate = toml_get<double>(t, "model.learning_rate", c.mlp.learning_rate);
  c.mlp.batch_size = toml_get<std::size_t>(t, "model.batch_size", c.mlp.batch_size);
  c.mlp.patience = toml_get<std::size_t>(t, "model.patience", c.mlp.patience);
  c.mlp.max_epochs = toml_get<std::size_t>(t, "model.max_epochs", c.mlp.max_epochs);
  c.per_country = toml_get<bool>(t, "model.per_country", c.per_country);
  c.min_country_samples = toml_get<std::size_t>(t, "model.min_country_samples", c.min_country_samples);

  c.split.train_frac = toml_get<double>(t, "split.train", c.split.train_frac);
  c.split.val_frac = toml_get<double>(t, "split.val", c.split.val_frac);
  c.split.test_frac = toml_get<double>(t, "split.test", c.split.test_frac);

  c.selection.min_country_share = toml_get<double>(t, "selection.min_country_share", c.selection.min_country_share);
  c.selection.max_crops = toml_get<std::size_t>(t, "selection.max_crops", c.selection.max_crops);
  return c;
}

inline PipelineConfig load_config(const fs::path& config_path) {
  if (!fs::is_regular_file(config_path)) throw Error(Errc::InvalidConfig, "config file not found: " + config_path.string());
  auto c = parse_config(csv::read_file(config_path.string()), fs::absolute(config_path).parent_path());
  c.config_path = config_path;
  return c;
}

/// One line per problem that would stop the pipeline; empty when runnable.
inline std::vector<std::string> validate_config(const PipelineConfig& c) {
  std::vector<std::string> d;
  auto need_file = [&](const fs::path& p, const char* key) {
    if (!fs::is_regular_file(p)) d.push_back(std::string(key) + ": file not found: " + p.string());
  };
  if (!fs::is_directory(c.paths.scene_dir)) d.push_back("paths.scene_dir: directory not found: " + c.paths.scene_dir.string());
  need_file(c.paths.balances, "paths.balances");
  need_file(c.paths.regions, "paths.regions");
  need_file(c.paths.calendar, "paths.calendar");
  need_file(c.paths.zones, "paths.zones");
  need_file(c.paths.zone_names, "paths.zone_names");
  if (c.paths.output_dir.empty()) d.push_back("paths.output_dir: must be set");
  if (const auto p = c.split.problem(); !p.empty()) d.push_back("split: " + p);
  if (c.target_year <= c.baseline_year) d.push_back("analysis: target_year must follow baseline_year");
  if (c.asof_day < 1 || c.asof_day > 366) d.push_back("analysis.asof_day: must lie in [1,366]");
  if (c.cadence_days < 1) d.push_back("analysis.cadence_days: must be >= 1");
  if (c.mask_threshold < 0.0) d.push_back("analysis.mask_threshold: must be >= 0");
  if (c.aggregates.empty()) d.push_back("analysis.aggregates: at least one aggregate required");
  if (c.forest.n_trees < 1 || c.forest.min_leaf < 1 || c.forest.max_depth < 1) {
    d.push_back("forecast: n_trees, max_depth and min_leaf must be >= 1");
  }
  if (!(c.mlp.learning_rate > 0.0) || c.mlp.batch_size < 1 || c.mlp.max_epochs < 1) {
    d.push_back("model: learning_rate, batch_size and max_epochs must be positive");
  }
  if (c.threads < 1) d.push_back("threads: must be >= 1");
  return d;
}

inline std::vector<std::string> validate_config(const fs::path& config_path) {
  try {
    return validate_config(load_config(config_path));
  } catch (const Error& e) {
    return {e.what()};
  }
}

/// Pipeline configuration for a scene written by write_synthetic_scene into
/// the same directory; paths are relative to it.
inline std::string synthetic_pipeline_toml(const SynthConfig& s) {
  std::string t;
  t += "seed = " + std::to_string(s.seed) + "\n";
  t += "threads = 1\n\n";
  t += "[paths]\n";
  t += "scene_dir = \"stacks\"\nbalances = \"balances.csv\"\nregions = \"regions.csv\"\n";
  t += "calendar = \"calendar.csv\"\nzones = \"zones.grdh\"\nzone_names = \"zones.csv\"\noutput_dir = \"out\"\n\n";
  t += "[analysis]\n";
  t += "crop = \"" + s.crop + "\"\n";
  t += "baseline_year = " + std::to_string(s.first_year) + "\n";
  t += "target_year = " + std::to_string(s.last_year) + "\n";
  t += "asof_day = 193\ncadence_days = 16\n\n";
  t += "[model]\n";
  t += "learning_rate = 0.1\npatience = 100\nmax_epochs = 2000\n";
  return t;
}

inline void write_synthetic_pipeline(const SynthConfig& s, const fs::path& dir) {
  write_synthetic_scene(s, dir);
  csv::write_file((dir / "pipeline.toml").string(), synthetic_pipeline_toml(s));
}

// ---------------------------------------------------------------------------
// Stage helpers

inline ZoneMap read_zone_map(const fs::path& header) { return zones_from_raster(read_grid(header)); }

inline const CropCalendarEntry& calendar_for(const std::vector<CropCalendarEntry>& cal, const std::string& country,
                                             const std::string& crop) {
  for (const auto& e : cal) {
    if (e.country == country && e.crop == crop) return e;
  }
  throw Error(Errc::ParseError, "crop calendar has no entry for " + country + "/" + crop);
}

inline GridRaster baseline_production(const PipelineConfig& c) {
  return read_grid(c.paths.scene_dir / (frame_stem(Parameter::PRODUCTION, c.baseline_year, 1) + ".grdh"));
}

inline fs::path analysis_dir(const PipelineConfig& c) { return c.out("analysis"); }
inline fs::path forecast_dir(const PipelineConfig& c) { return c.out("forecast"); }

// ---------------------------------------------------------------------------
// Stages

/// Regional crop selection from the balance table -> selected_crops.csv
/// (region,crop,count).
inline void stage_select_crops(const fs::path& balances, const fs::path& regions, const fs::path& out_csv,
                               const RegionalSelectionRule& rule = {}) {
  const auto records = read_commodity_table(balances.string());
  const auto region_of = read_region_table(regions.string());
  const auto selections = select_all_countries(records);
  std::set<std::string> region_names;
  for (const auto& [country, region] : region_of) region_names.insert(region);
  std::string out = "region,crop,count\n";
  for (const auto& region : region_names) {
    const auto tallies = tally_region(selections, region_of, region);
    for (const auto& t : select_regional_crops(tallies, countries_in_region(region_of, region), rule)) {
      out += csv::join({t.region, t.crop, std::to_string(t.count)}) + "\n";
    }
  }
  if (out_csv.has_parent_path()) fs::create_directories(out_csv.parent_path());
  csv::write_file(out_csv.string(), out);
}

inline CropMask stage_mask(const PipelineConfig& c) {
  const CropMask mask = build_crop_mask(baseline_production(c), c.mask_threshold);
  GridRaster r(mask.geo, 0.0, kDefaultNodata, "mask");
  for (std::size_t i = 0; i < r.values.size(); ++i) r.values[i] = mask.cells[i];
  write_grid(r, c.out("mask.grdh"), LayerTag{"MASK", c.baseline_year, 0});
  return mask;
}

inline CropMask read_mask(const fs::path& header) {
  const GridRaster r = read_grid(header);
  CropMask m{r.geo, std::vector<std::uint8_t>(r.values.size(), 0)};
  for (std::size_t i = 0; i < r.values.size(); ++i) m.cells[i] = (r.values[i] != r.nodata && r.values[i] > 0.5) ? 1 : 0;
  return m;
}

/// Resamples every input year onto the analysis (baseline production) grid at
/// the analysis cadence and writes the frames to out/analysis. Target-year
/// frames after asof_day are withheld.
inline void stage_prepare(const PipelineConfig& c) {
  const GridGeometry grid = baseline_production(c).geo;
  for (auto p : kInputParameters) {
    for (int year : list_years(c.paths.scene_dir, p)) {
      if (year < c.baseline_year || year > c.target_year) continue;
      const int last = year == c.target_year ? c.asof_day : 366;
      const TimeSeriesStack native = read_stack(c.paths.scene_dir, p, year, last);
      const TimeSeriesStack st = to_analysis_grid(native, grid, c.cadence_days, c.resample.at(p));
      TimeSeriesStack kept = st;
      kept.frames.clear();
      for (std::size_t k = 0; k < st.frames.size(); ++k) {
        if (st.day_of_frame(k) <= last) kept.frames.push_back(st.frames[k]);
      }
      write_stack(kept, analysis_dir(c));
    }
  }
}

struct ForecastOptions {
  ForestParams forest;
  bool per_pixel = false;
  std::uint64_t seed = 0;
  int season_end_day = 366;
  const CropMask* mask = nullptr;  // forecast only these pixels
  const ZoneMap* zones = nullptr;  // pool per zone instead of over all pixels
};

/// Completes the latest year in `history_dir` past `asof_day` for every
/// input parameter found there. Earlier years must be complete seasons.
/// Writes the observed frames up to asof_day plus the forecast frames to
/// `out_dir`. Pixels outside the mask, or lacking history, become nodata.
inline void forecast_stack_dir(const fs::path& history_dir, int asof_day, const fs::path& out_dir,
                               const ForecastOptions& opt) {
  for (auto p : kInputParameters) {
    const auto years = list_years(history_dir, p);
    if (years.size() < 2) {
      throw Error(Errc::InsufficientHistory, std::string(to_string(p)) + ": need at least two seasons in " +
                                                 history_dir.string());
    }
    std::vector<TimeSeriesStack> seasons;
    for (int y : years) seasons.push_back(read_stack(history_dir, p, y, y == years.back() ? asof_day : 366));
    const TimeSeriesStack& current = seasons.back();
    const GridGeometry& g = current.geometry();
    const std::size_t season_len = seasons.front().frames.size();
    for (const auto& s : seasons) {
      if (s.cadence_days != current.cadence_days || s.start_day_of_year != current.start_day_of_year ||
          !(s.geometry() == g)) {
        throw Error(Errc::GridMismatch, std::string(to_string(p)) + ": history seasons differ in layout");
      }
    }

    const int last_observed = current.day_of_frame(current.frames.size() - 1);
    const int season_last = current.start_day_of_year + static_cast<int>(season_len - 1) * current.cadence_days;
    const int horizon = std::min(opt.season_end_day, season_last) - last_observed;

    // Pixel groups that share one forest.
    std::map<int, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (opt.mask && !(*opt.mask)[i]) continue;
      const int key = opt.per_pixel ? static_cast<int>(i) : (opt.zones ? opt.zones->zone_ids[i] : 0);
      groups[key].push_back(i);
    }

    TimeSeriesStack completed = current;
    const std::size_t steps = horizon > 0 ? static_cast<std::size_t>(horizon / current.cadence_days) : 0;
    for (std::size_t s = 0; s < steps; ++s) completed.frames.push_back(GridRaster(g, current.frames.front().nodata,
                                                                                  current.frames.front().nodata,
                                                                                  current.frames.front().units));
    if (steps > 0) {
      for (const auto& [key, pixels] : groups) {
        std::vector<SeasonalHistory> hist;
        std::vector<std::size_t> used;
        for (auto i : pixels) {
          SeasonalHistory h{current.start_day_of_year, current.cadence_days, {}};
          for (const auto& s : seasons) {
            std::vector<double> v;
            for (const auto& f : s.frames) v.push_back(f.values[i] == f.nodata ? std::nan("") : f.values[i]);
            h.seasons.push_back(std::move(v));
          }
          hist.push_back(std::move(h));
          used.push_back(i);
        }
        std::vector<std::vector<double>> fc;
        try {
          fc = forecast_pooled(hist, horizon, opt.forest,
                               derive_seed(opt.seed, std::string(to_string(p)) + ":" + std::to_string(key)));
        } catch (const Error& e) {
          if (e.code() != Errc::InsufficientHistory) throw;
          continue;  // group stays nodata
        }
        for (std::size_t k = 0; k < used.size(); ++k) {
          for (std::size_t s = 0; s < steps; ++s) {
            auto& f = completed.frames[current.frames.size() + s];
            if (!std::isnan(fc[k][s])) f.values[used[k]] = fc[k][s];
          }
        }
      }
    }
    write_stack(completed, out_dir);
  }
}

inline void stage_forecast(const PipelineConfig& c) {
  const CropMask mask = read_mask(c.out("mask.grdh"));
  const ZoneMap zones = read_zone_map(c.paths.zones);
  int season_end = 0;
  for (const auto& e : read_crop_calendar(c.paths.calendar.string())) {
    if (e.crop == c.crop) season_end = std::max(season_end, e.harvest.start);
  }
  ForecastOptions opt;
  opt.forest = c.forest;
  opt.per_pixel = c.forecast_per_pixel;
  opt.seed = c.stage_seed("forecast");
  opt.season_end_day = season_end > 0 ? season_end : 366;
  opt.mask = &mask;
  opt.zones = &zones;
  forecast_stack_dir(analysis_dir(c), c.asof_day, forecast_dir(c), opt);
}

inline StackSet read_stack_set(const fs::path& dir, int year) {
  StackSet s;
  for (auto p : kInputParameters) s[p] = read_stack(dir, p, year);
  return s;
}

/// Per-country datasets concatenated in zone-id order. Each country's window
/// runs from max(sowing start, detected onset) to harvest start, the onset
/// being detected on that country's masked mean NDVI profile.
inline FeatureDataset country_datasets(const PipelineConfig& c, const StackSet& stacks, const GridRaster* production,
                                       const CropMask& mask, const ZoneMap& zones,
                                       const std::map<int, ZoneName>& names,
                                       const std::vector<CropCalendarEntry>& calendar) {
  FeatureDataset all;
  all.feature_names = feature_names(c.aggregates);
  all.X.cols = all.feature_names.size();
  for (const auto& [id, name] : names) {
    const auto [series, days] = masked_mean_profile(stacks.at(Parameter::NDVI), mask, &zones, id);
    const std::optional<int> onset = series.size() >= 3 ? detect_greenness_onset(series, days) : std::nullopt;
    const SeasonWindow w = resolve_window(calendar_for(calendar, name.country, c.crop), onset);
    all.append(build_feature_vectors(stacks, production, mask, w, c.aggregates, &zones, id));
  }
  return all;
}

/// Training dataset (baseline year, observed) and prediction dataset (target
/// year, observed + forecast).
inline void stage_features(const PipelineConfig& c, const fs::path& train_csv, const fs::path& predict_csv) {
  const CropMask mask = read_mask(c.out("mask.grdh"));
  const ZoneMap zones = read_zone_map(c.paths.zones);
  const auto names = read_zone_names(c.paths.zone_names.string());
  const auto calendar = read_crop_calendar(c.paths.calendar.string());
  const GridRaster production = baseline_production(c);

  const StackSet base = read_stack_set(analysis_dir(c), c.baseline_year);
  write_dataset(country_datasets(c, base, &production, mask, zones, names, calendar), train_csv.string());
  const StackSet target = read_stack_set(forecast_dir(c), c.target_year);
  write_dataset(country_datasets(c, target, nullptr, mask, zones, names, calendar), predict_csv.string());
}

// ---------------------------------------------------------------------------
// Training bundle: one model per country (or one pooled model) plus metrics.

struct TrainedModels {
  std::map<std::string, MlpModel> by_country;  // "" = pooled
  nlohmann::ordered_json metrics;
};

inline std::map<std::string, std::vector<std::size_t>> samples_by_country(const FeatureDataset& ds, const ZoneMap& zones,
                                                                         const std::map<int, ZoneName>& names) {
  std::map<std::string, std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto [r, col] = ds.pixel_index[i];
    const int z = zones.zone_ids[r * zones.geo.n_cols + col];
    const auto it = names.find(z);
    out[it != names.end() ? it->second.country : ""].push_back(i);
  }
  return out;
}

/// Trains, evaluates on the held-out test part and returns the model.
inline MlpModel train_and_evaluate(const FeatureDataset& ds, const PipelineConfig& c, const std::string& label,
                                   nlohmann::ordered_json& metrics) {
  SplitSpec spec = c.split;
  spec.seed = c.stage_seed("split:" + label);
  const auto parts = split_dataset(ds, spec);
  MlpModel model = train_mlp(parts.train, parts.val, c.mlp, c.stage_seed("train:" + label));
  nlohmann::ordered_json m;
  m["n_train"] = parts.train.size();
  m["n_val"] = parts.val.size();
  m["n_test"] = parts.test.size();
  m["best_epoch"] = model.best_epoch;
  if (parts.test.size() > 0) {
    const auto pred = predict_mlp(model, parts.test.X);
    std::vector<double> zp, za;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      zp.push_back(model.norm.normalize_target(pred[i]));
      za.push_back(model.norm.normalize_target(parts.test.y[i]));
    }
    m["test_rmse_t"] = rmse(pred, parts.test.y);
    m["test_rmse_z"] = rmse(zp, za);
    m["test_r2"] = r_squared(pred, parts.test.y);
    m["test_pred"] = pred;
    m["test_actual"] = parts.test.y;
  }
  metrics[label.empty() ? "pooled" : label] = m;
  return model;
}

inline TrainedModels train_models(const FeatureDataset& ds, const PipelineConfig& c, const ZoneMap* zones,
                                  const std::map<int, ZoneName>* names) {
  TrainedModels tm;
  tm.metrics = nlohmann::ordered_json::object();
  auto& per = tm.metrics["models"] = nlohmann::ordered_json::object();
  bool need_pooled = !c.per_country || zones == nullptr;
  if (!need_pooled) {
    for (const auto& [country, idx] : samples_by_country(ds, *zones, *names)) {
      if (country.empty() || idx.size() < c.min_country_samples) {
        need_pooled = true;
        continue;
      }
      tm.by_country[country] = train_and_evaluate(ds.subset(idx), c, country, per);
    }
  }
  if (need_pooled) tm.by_country[""] = train_and_evaluate(ds, c, "", per);

  // Out-of-sample summary over every model, plus R^2 over all test samples.
  std::vector<double> rmses, all_pred, all_actual;
  for (const auto& [label, m] : per.items()) {
    if (!m.contains("test_rmse_z")) continue;
    rmses.push_back(m["test_rmse_z"].get<double>());
    for (double v : m["test_pred"]) all_pred.push_back(v);
    for (double v : m["test_actual"]) all_actual.push_back(v);
  }
  if (!rmses.empty()) {
    tm.metrics["oos_rmse_z_mean"] = std::accumulate(rmses.begin(), rmses.end(), 0.0) / static_cast<double>(rmses.size());
    tm.metrics["oos_rmse_z_min"] = *std::min_element(rmses.begin(), rmses.end());
    tm.metrics["oos_rmse_z_max"] = *std::max_element(rmses.begin(), rmses.end());
    tm.metrics["oos_r2"] = r_squared(all_pred, all_actual);
    tm.metrics["oos_rmse_t"] = rmse(all_pred, all_actual);
  }
  return tm;
}

inline void write_models(const TrainedModels& tm, const fs::path& model_json) {
  nlohmann::ordered_json j;
  auto& models = j["models"] = nlohmann::ordered_json::object();
  for (const auto& [country, m] : tm.by_country) models[country.empty() ? "pooled" : country] = mlp_to_json(m);
  j["metrics"] = tm.metrics;
  if (model_json.has_parent_path()) fs::create_directories(model_json.parent_path());
  csv::write_file(model_json.string(), j.dump(1) + "\n");
}

inline std::map<std::string, MlpModel> read_models(const fs::path& model_json) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(csv::read_file(model_json.string()));
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ParseError, model_json.string() + ": " + e.what());
  }
  std::map<std::string, MlpModel> out;
  for (const auto& [name, m] : j.at("models").items()) out[name == "pooled" ? "" : name] = mlp_from_json(m);
  return out;
}

inline void stage_train(const PipelineConfig& c, const fs::path& dataset_csv, const fs::path& model_json) {
  const FeatureDataset ds = read_dataset(dataset_csv.string());
  if (c.per_country && fs::is_regular_file(c.paths.zones) && fs::is_regular_file(c.paths.zone_names)) {
    const ZoneMap zones = read_zone_map(c.paths.zones);
    const auto names = read_zone_names(c.paths.zone_names.string());
    write_models(train_models(ds, c, &zones, &names), model_json);
  } else {
    write_models(train_models(ds, c, nullptr, nullptr), model_json);
  }
}

/// Prediction raster on the analysis grid; nodata where no sample exists.
inline GridRaster stage_predict(const PipelineConfig& c, const fs::path& model_json, const fs::path& predict_csv,
                                const fs::path& pred_grd) {
  const auto models = read_models(model_json);
  const FeatureDataset ds = read_dataset(predict_csv.string());
  const ZoneMap zones = read_zone_map(c.paths.zones);
  const auto names = read_zone_names(c.paths.zone_names.string());
  GridRaster pred(zones.geo, kDefaultNodata, kDefaultNodata, "t");
  for (const auto& [country, idx] : samples_by_country(ds, zones, names)) {
    auto it = models.find(country);
    if (it == models.end()) it = models.find("");
    if (it == models.end()) throw Error(Errc::ParseError, "no model for " + country + " and no pooled model");
    const FeatureDataset part = ds.subset(idx);
    const auto y = predict_mlp(it->second, part.X);
    for (std::size_t k = 0; k < part.size(); ++k) pred.at(part.pixel_index[k].row, part.pixel_index[k].col) = y[k];
  }
  write_grid(pred, pred_grd, LayerTag{"PRODUCTION", c.target_year, 0});
  return pred;
}

/// report.csv, ratio.grdh/.grd and ratio.pgm in `out_dir`. The baseline is
/// restricted to the cells that received a prediction.
inline ForecastReport stage_report(const fs::path& pred_grd, const fs::path& baseline_grd, const fs::path& zones_grd,
                                   const fs::path& zone_names_csv, const fs::path& out_dir, const std::string& crop) {
  const GridRaster pred = read_grid(pred_grd);
  GridRaster baseline = read_grid(baseline_grd);
  detail::require_same_grid(pred.geo, baseline.geo, "report: prediction and baseline grids differ");
  for (std::size_t i = 0; i < baseline.values.size(); ++i) {
    if (pred.values[i] == pred.nodata) baseline.values[i] = baseline.nodata;
  }
  const ZoneMap zones = read_zone_map(zones_grd);
  const auto names = read_zone_names(zone_names_csv.string());
  const ForecastReport rep = build_report(pred, baseline, zones, names, crop);
  fs::create_directories(out_dir);
  emit_report(rep, (out_dir / "report.csv").string());
  const GridRaster ratio = ratio_map(pred, baseline);
  write_grid(ratio, out_dir / "ratio.grdh", LayerTag{"RATIO", 0, 0});
  write_ratio_pgm(ratio, (out_dir / "ratio.pgm").string());
  return rep;
}

// ---------------------------------------------------------------------------
// Manifest

inline std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error(Errc::IoError, "SHA-256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xF]);
  }
  return out;
}

inline constexpr const char* kManifestName = "manifest.json";

/// Every file under `dir` (except the manifest) with size and SHA-256, in
/// lexicographic path order.
inline nlohmann::ordered_json build_manifest(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().filename() != kManifestName) files.push_back(fs::relative(e.path(), dir));
  }
  std::sort(files.begin(), files.end());
  nlohmann::ordered_json j;
  auto& arr = j["artifacts"] = nlohmann::ordered_json::array();
  for (const auto& rel : files) {
    const std::string bytes = csv::read_file((dir / rel).string());
    arr.push_back({{"path", rel.generic_string()}, {"bytes", bytes.size()}, {"sha256", sha256_hex(bytes)}});
  }
  return j;
}

inline void write_manifest(const fs::path& dir) {
  csv::write_file((dir / kManifestName).string(), build_manifest(dir).dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Full run

enum class ExitCode : int { ok = 0, config = 1, data = 2, divergence = 3 };

struct RunResult {
  ExitCode code = ExitCode::ok;
  std::string stage;
  std::string message;
};

inline ExitCode exit_code_for(const Error& e) {
  switch (e.code()) {
    case Errc::InvalidConfig: return ExitCode::config;
    case Errc::DivergenceDetected: return ExitCode::divergence;
    default: return ExitCode::data;
  }
}

/// Runs one named stage body, mapping failures onto pipeline exit codes.
template <typename F>
RunResult run_stage(const std::string& stage, F&& body) {
  try {
    body();
    return {};
  } catch (const Error& e) {
    return {exit_code_for(e), stage, e.what()};
  } catch (const fs::filesystem_error& e) {
    return {ExitCode::data, stage, e.what()};
  }
}

/// Copies the baseline production (masked) next to the predictions so the
/// report stage reads both from the output directory.
inline void stage_baseline(const PipelineConfig& c) {
  const CropMask mask = read_mask(c.out("mask.grdh"));
  write_grid(apply_mask(baseline_production(c), mask), c.out("baseline.grdh"),
             LayerTag{"PRODUCTION", c.baseline_year, 0});
}

inline RunResult run_pipeline(const PipelineConfig& c) {
  if (const auto diags = validate_config(c); !diags.empty()) return {ExitCode::config, "validate", diags.front()};
  const std::pair<const char*, std::function<void()>> stages[] = {
      {"select-crops", [&] {
         fs::create_directories(c.paths.output_dir);
         stage_select_crops(c.paths.balances, c.paths.regions, c.out("selected_crops.csv"), c.selection);
       }},
      {"mask", [&] { stage_mask(c); stage_baseline(c); }},
      {"features", [&] {
         stage_prepare(c);
         stage_forecast(c);
         stage_features(c, c.out("train_dataset.csv"), c.out("predict_dataset.csv"));
       }},
      {"train", [&] { stage_train(c, c.out("train_dataset.csv"), c.out("model.json")); }},
      {"predict", [&] { stage_predict(c, c.out("model.json"), c.out("predict_dataset.csv"), c.out("pred.grdh")); }},
      {"report", [&] {
         stage_report(c.out("pred.grdh"), c.out("baseline.grdh"), c.paths.zones, c.paths.zone_names,
                      c.paths.output_dir, c.crop);
         write_manifest(c.paths.output_dir);
       }},
  };
  for (const auto& [name, body] : stages) {
    if (auto r = run_stage(name, body); r.code != ExitCode::ok) return r;
  }
  return {};
}

inline RunResult run_pipeline(const fs::path& config_path) {
  try {
    return run_pipeline(load_config(config_path));
  } catch (const Error& e) {
    return {ExitCode::config, "config", e.what()};
  }
}

}  // namespace cropcast
