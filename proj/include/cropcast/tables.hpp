#pragma once

// Tabular inputs: commodity balances, crop calendars, country->region and
// zone-id lookup tables. All are UTF-8 CSV with a header row.

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "cropcast/csv.hpp"
#include "cropcast/error.hpp"

namespace cropcast {

struct CommodityBalance {
  std::string country;
  std::string commodity;
  double production_t = 0.0;   // tonnes/year, mean over available years
  double consumption_t = 0.0;  // domestic supply, tonnes/year

  friend bool operator==(const CommodityBalance&, const CommodityBalance&) = default;
};

/// Averages yearly rows `country,commodity,year,production_t,consumption_t`
/// into one record per (country, commodity). Blank quantity cells are
/// missing years; each column is averaged over the years it has. Records come
/// back sorted by (country, commodity) and the result does not depend on
/// input row order.
inline std::vector<CommodityBalance> parse_commodity_table(const csv::Table& t) {
  const auto c_country = t.column("country");
  const auto c_commodity = t.column("commodity");
  const auto c_year = t.column("year");
  const auto c_prod = t.column("production_t");
  const auto c_cons = t.column("consumption_t");

  struct Obs {
    long long year;
    std::optional<double> prod, cons;
  };
  std::map<std::pair<std::string, std::string>, std::vector<Obs>> groups;
  for (const auto& row : t.rows) {
    Obs o{csv::to_int(row[c_year], "year"), std::nullopt, std::nullopt};
    if (!row[c_prod].empty()) o.prod = csv::to_double(row[c_prod], "production_t");
    if (!row[c_cons].empty()) o.cons = csv::to_double(row[c_cons], "consumption_t");
    if ((o.prod && *o.prod < 0.0) || (o.cons && *o.cons < 0.0)) {
      throw Error(Errc::NegativeQuantity, row[c_country] + "/" + row[c_commodity] + " year " + row[c_year]);
    }
    groups[{row[c_country], row[c_commodity]}].push_back(o);
  }

  std::vector<CommodityBalance> out;
  out.reserve(groups.size());
  for (auto& [key, obs] : groups) {
    std::sort(obs.begin(), obs.end(), [](const Obs& a, const Obs& b) {
      return std::tuple(a.year, a.prod.value_or(-1.0), a.cons.value_or(-1.0)) <
             std::tuple(b.year, b.prod.value_or(-1.0), b.cons.value_or(-1.0));
    });
    auto mean = [&](auto field, const char* name) {
      double sum = 0.0;
      std::size_t n = 0;
      for (const auto& o : obs) {
        if (const auto& v = o.*field) {
          sum += *v;
          ++n;
        }
      }
      if (n == 0) throw Error(Errc::ParseError, key.first + "/" + key.second + " has no " + name + " values");
      return sum / static_cast<double>(n);
    };
    out.push_back({key.first, key.second, mean(&Obs::prod, "production_t"), mean(&Obs::cons, "consumption_t")});
  }
  return out;
}

inline std::vector<CommodityBalance> read_commodity_table(const std::string& path) {
  return parse_commodity_table(csv::read_table(path));
}

/// Inclusive day-of-year range; `end < start` wraps across the year end.
struct DayRange {
  int start = 1;
  int end = 366;

  [[nodiscard]] bool contains(int day) const noexcept {
    return start <= end ? (day >= start && day <= end) : (day >= start || day <= end);
  }
  [[nodiscard]] bool valid() const noexcept { return start >= 1 && start <= 366 && end >= 1 && end <= 366; }

  friend bool operator==(const DayRange&, const DayRange&) = default;
};

struct CropCalendarEntry {
  std::string country;
  std::string crop;
  DayRange sowing, growing, harvest;
};

inline std::vector<CropCalendarEntry> read_crop_calendar(const std::string& path) {
  const auto t = csv::read_table(path);
  const std::size_t cols[] = {t.column("sow_start"),   t.column("sow_end"),       t.column("grow_start"),
                              t.column("grow_end"),    t.column("harvest_start"), t.column("harvest_end")};
  const auto c_country = t.column("country");
  const auto c_crop = t.column("crop");
  std::vector<CropCalendarEntry> out;
  for (const auto& row : t.rows) {
    int d[6];
    for (int i = 0; i < 6; ++i) d[i] = static_cast<int>(csv::to_int(row[cols[i]], t.header[cols[i]]));
    CropCalendarEntry e{row[c_country], row[c_crop], {d[0], d[1]}, {d[2], d[3]}, {d[4], d[5]}};
    if (!e.sowing.valid() || !e.growing.valid() || !e.harvest.valid()) {
      throw Error(Errc::ParseError, "crop calendar day outside [1,366] for " + e.country + "/" + e.crop);
    }
    out.push_back(std::move(e));
  }
  return out;
}

inline std::string calendar_csv(const std::vector<CropCalendarEntry>& entries) {
  std::string out = "country,crop,sow_start,sow_end,grow_start,grow_end,harvest_start,harvest_end\n";
  for (const auto& e : entries) {
    out += csv::join({e.country, e.crop, std::to_string(e.sowing.start), std::to_string(e.sowing.end),
                      std::to_string(e.growing.start), std::to_string(e.growing.end),
                      std::to_string(e.harvest.start), std::to_string(e.harvest.end)}) +
           "\n";
  }
  return out;
}

/// country -> region, from `country,region`.
inline std::map<std::string, std::string> read_region_table(const std::string& path) {
  const auto t = csv::read_table(path);
  const auto c_country = t.column("country");
  const auto c_region = t.column("region");
  std::map<std::string, std::string> out;
  for (const auto& row : t.rows) out[row[c_country]] = row[c_region];
  return out;
}

struct ZoneName {
  std::string country;
  std::string region;
};

/// zone id -> names, from `zone_id,country,region`.
inline std::map<int, ZoneName> read_zone_names(const std::string& path) {
  const auto t = csv::read_table(path);
  const auto c_id = t.column("zone_id");
  const auto c_country = t.column("country");
  const auto c_region = t.column("region");
  std::map<int, ZoneName> out;
  for (const auto& row : t.rows) {
    const auto id = static_cast<int>(csv::to_int(row[c_id], "zone_id"));
    if (id == 0) throw Error(Errc::ParseError, "zone id 0 is reserved for 'outside all zones'");
    out[id] = {row[c_country], row[c_region]};
  }
  return out;
}

}  // namespace cropcast
