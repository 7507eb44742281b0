#pragma once

// Aggregation of pixel predictions into country and region totals, rates of
// change against a baseline, ratio maps and their CSV / PGM renderings.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "cropcast/csv.hpp"
#include "cropcast/error.hpp"
#include "cropcast/raster.hpp"
#include "cropcast/tables.hpp"

namespace cropcast {

inline constexpr const char* kAllCountries = "ALL";

/// Percent change from `baseline_t` to `predicted_t`.
inline double rate_of_change(double baseline_t, double predicted_t) {
  if (!(baseline_t > 0.0)) throw Error(Errc::ZeroBaseline, "rate_of_change: baseline must be positive");
  return 100.0 * (predicted_t - baseline_t) / baseline_t;
}

/// Tonnes per country; zones that share a country name are summed.
inline std::map<std::string, double> country_totals(const GridRaster& pred, const ZoneMap& zones,
                                                    const std::map<int, ZoneName>& zone_names) {
  std::map<std::string, double> out;
  for (const auto& [id, name] : zone_names) out.try_emplace(name.country, 0.0);
  for (const auto& [id, st] : zonal_sum(pred, zones)) {
    const auto it = zone_names.find(id);
    const std::string country = it != zone_names.end() ? it->second.country : "zone_" + std::to_string(id);
    out[country] += st.sum;
  }
  return out;
}

/// Cellwise pred / baseline; nodata where either is nodata or baseline <= 0.
/// Values above 1 mark an expected increase.
inline GridRaster ratio_map(const GridRaster& pred, const GridRaster& baseline) {
  detail::require_same_grid(pred.geo, baseline.geo, "ratio_map: grids differ");
  GridRaster out(pred.geo, pred.nodata, pred.nodata, "ratio");
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    const double p = pred.values[i];
    const double b = baseline.values[i];
    if (p == pred.nodata || b == baseline.nodata || !(b > 0.0)) continue;
    out.values[i] = p / b;
  }
  return out;
}

/// Each country's percent of the summed total.
inline std::map<std::string, double> share_of_total(const std::map<std::string, double>& totals) {
  double sum = 0.0;
  for (const auto& [k, v] : totals) sum += v;
  if (!(sum > 0.0)) throw Error(Errc::AllZero, "share_of_total: no positive total");
  std::map<std::string, double> out;
  for (const auto& [k, v] : totals) out[k] = 100.0 * v / sum;
  return out;
}

struct ReportRow {
  std::string region;
  std::string country;  // or kAllCountries for a regional row
  std::string crop;
  double baseline_total_t = 0.0;
  double predicted_total_t = 0.0;
  double rate_of_change_pct = 0.0;

  friend bool operator==(const ReportRow&, const ReportRow&) = default;
};

struct ForecastReport {
  std::vector<ReportRow> rows;

  /// Appends a row, deriving the rate (NaN when the baseline is 0).
  void add(std::string region, std::string country, std::string crop, double baseline_t, double predicted_t) {
    const double rate = baseline_t > 0.0 ? rate_of_change(baseline_t, predicted_t) : std::nan("");
    rows.push_back({std::move(region), std::move(country), std::move(crop), baseline_t, predicted_t, rate});
  }

  void sort() {
    std::sort(rows.begin(), rows.end(), [](const ReportRow& a, const ReportRow& b) {
      return std::tie(a.region, a.country, a.crop) < std::tie(b.region, b.country, b.crop);
    });
  }
};

/// Country rows plus one ALL row per region, from baseline and predicted
/// rasters over the same zones.
inline ForecastReport build_report(const GridRaster& pred, const GridRaster& baseline, const ZoneMap& zones,
                                   const std::map<int, ZoneName>& zone_names, const std::string& crop) {
  const auto pred_tot = country_totals(pred, zones, zone_names);
  const auto base_tot = country_totals(baseline, zones, zone_names);
  std::map<std::string, std::string> region_of;
  for (const auto& [id, n] : zone_names) region_of[n.country] = n.region;

  ForecastReport rep;
  std::map<std::string, std::pair<double, double>> regional;
  for (const auto& [country, region] : region_of) {
    const double b = base_tot.at(country);
    const double p = pred_tot.at(country);
    rep.add(region, country, crop, b, p);
    regional[region].first += b;
    regional[region].second += p;
  }
  for (const auto& [region, bp] : regional) rep.add(region, kAllCountries, crop, bp.first, bp.second);
  rep.sort();
  return rep;
}

inline constexpr const char* kReportHeader = "region,country,crop,baseline_t,predicted_t,rate_pct";

/// Rate truncated toward zero at two decimals (-4.926 -> "-4.92"), with a
/// 1e-7 nudge for values like 4.2099999...
inline std::string format_rate(double pct) {
  const double nudge = pct >= 0.0 ? 1e-7 : -1e-7;
  double t = std::trunc(pct * 100.0 + nudge) / 100.0;
  if (t == 0.0) t = 0.0;
  return csv::format_fixed(t, 2);
}

/// Totals are written at full precision, the rate with two decimals. Rows are
/// ordered by (region, country, crop).
inline std::string report_csv(ForecastReport report) {
  report.sort();
  std::string out = std::string(kReportHeader) + "\n";
  for (const auto& r : report.rows) {
    const std::string rate = std::isnan(r.rate_of_change_pct) ? "" : format_rate(r.rate_of_change_pct);
    out += csv::join({r.region, r.country, r.crop, csv::format_double(r.baseline_total_t),
                      csv::format_double(r.predicted_total_t), rate}) +
           "\n";
  }
  return out;
}

inline void emit_report(const ForecastReport& report, const std::string& path) {
  csv::write_file(path, report_csv(report));
}

inline ForecastReport read_report(const std::string& path) {
  const auto t = csv::read_table(path);
  const std::size_t c[] = {t.column("region"),     t.column("country"),     t.column("crop"),
                           t.column("baseline_t"), t.column("predicted_t"), t.column("rate_pct")};
  ForecastReport rep;
  for (const auto& row : t.rows) {
    rep.rows.push_back({row[c[0]], row[c[1]], row[c[2]], csv::to_double(row[c[3]], "baseline_t"),
                        csv::to_double(row[c[4]], "predicted_t"),
                        row[c[5]].empty() ? std::nan("") : csv::to_double(row[c[5]], "rate_pct")});
  }
  return rep;
}

// ---------------------------------------------------------------------------
// PGM rendering of ratio maps: binary P5, maxval 255. Ratios are clamped to
// [0, 2] and mapped linearly onto gray 1..255 (ratio 1 -> 128); nodata is 0.

inline constexpr double kPgmRatioMax = 2.0;

inline std::uint8_t ratio_to_gray(double ratio) {
  const double t = std::clamp(ratio, 0.0, kPgmRatioMax) / kPgmRatioMax;
  return static_cast<std::uint8_t>(1 + std::lround(t * 254.0));
}

inline std::string ratio_pgm(const GridRaster& ratio) {
  std::string out = "P5\n" + std::to_string(ratio.n_cols()) + " " + std::to_string(ratio.n_rows()) + "\n255\n";
  for (double v : ratio.values) out.push_back(static_cast<char>(v == ratio.nodata ? 0 : ratio_to_gray(v)));
  return out;
}

inline void write_ratio_pgm(const GridRaster& ratio, const std::string& path) { csv::write_file(path, ratio_pgm(ratio)); }

}  // namespace cropcast
