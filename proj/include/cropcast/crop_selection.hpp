#pragma once

// Country- and region-level staple selection from commodity balances:
// the ten most produced commodities of a country are re-ranked so that
// commodities consumed more than produced come first, and the first five are
// kept. Regions then pick the crops that recur most across their countries.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "cropcast/error.hpp"
#include "cropcast/tables.hpp"

namespace cropcast {

inline constexpr std::size_t kPreliminaryListSize = 10;
inline constexpr std::size_t kCountrySelectionSize = 5;

struct CountrySelection {
  std::string country;
  std::vector<std::string> top5;
};

struct RegionalTally {
  std::string region;
  std::string crop;
  std::size_t count = 0;

  friend bool operator==(const RegionalTally&, const RegionalTally&) = default;
};

struct RegionalSelectionRule {
  double min_country_share = 0.4;  // of the region's countries
  std::size_t max_crops = 3;
};

namespace detail {

inline bool by_production_then_name(const CommodityBalance& a, const CommodityBalance& b) {
  if (a.production_t != b.production_t) return a.production_t > b.production_t;
  return a.commodity < b.commodity;
}

}  // namespace detail

/// Commodities by descending production, ties by ascending name, at most `n`.
inline std::vector<CommodityBalance> top_produced(std::vector<CommodityBalance> records, std::size_t n) {
  std::sort(records.begin(), records.end(), detail::by_production_then_name);
  if (records.size() > n) records.resize(n);
  return records;
}

/// Consumption over production. Throws ZeroProduction when nothing is produced.
inline double self_sufficiency(const CommodityBalance& rec) {
  if (rec.production_t == 0.0) {
    throw Error(Errc::ZeroProduction, rec.country + "/" + rec.commodity + " has zero production");
  }
  return rec.consumption_t / rec.production_t;
}

/// Ratio used for ranking: zero production with positive consumption is
/// maximal dependence (+inf); nothing produced or consumed ranks as 0.
inline double ranking_ratio(const CommodityBalance& rec) {
  try {
    return self_sufficiency(rec);
  } catch (const Error&) {
    return rec.consumption_t > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
  }
}

inline bool is_essential(const CommodityBalance& rec) { return ranking_ratio(rec) > 1.0; }

inline CountrySelection select_country_crops(const std::vector<CommodityBalance>& records) {
  if (records.empty()) throw Error(Errc::EmptyInput, "select_country_crops: no records");
  auto ranked = top_produced(records, kPreliminaryListSize);
  std::stable_sort(ranked.begin(), ranked.end(), [](const CommodityBalance& a, const CommodityBalance& b) {
    return is_essential(a) && !is_essential(b);
  });

  CountrySelection sel{records.front().country, {}};
  for (const auto& rec : ranked) {
    if (sel.top5.size() == kCountrySelectionSize) break;
    if (std::find(sel.top5.begin(), sel.top5.end(), rec.commodity) == sel.top5.end()) {
      sel.top5.push_back(rec.commodity);
    }
  }
  return sel;
}

/// Groups a mixed balance table by country and selects for each.
inline std::vector<CountrySelection> select_all_countries(const std::vector<CommodityBalance>& records) {
  std::map<std::string, std::vector<CommodityBalance>> by_country;
  for (const auto& r : records) by_country[r.country].push_back(r);
  std::vector<CountrySelection> out;
  out.reserve(by_country.size());
  for (const auto& [country, recs] : by_country) out.push_back(select_country_crops(recs));
  return out;
}

/// Number of the region's countries whose top five contains each crop,
/// sorted by descending count then crop name.
inline std::vector<RegionalTally> tally_region(const std::vector<CountrySelection>& selections,
                                               const std::map<std::string, std::string>& region_of,
                                               const std::string& region) {
  std::map<std::string, std::size_t> counts;
  for (const auto& sel : selections) {
    const auto it = region_of.find(sel.country);
    if (it == region_of.end() || it->second != region) continue;
    const std::set<std::string> unique(sel.top5.begin(), sel.top5.end());
    for (const auto& crop : unique) ++counts[crop];
  }
  std::vector<RegionalTally> out;
  for (const auto& [crop, n] : counts) out.push_back({region, crop, n});
  std::stable_sort(out.begin(), out.end(),
                   [](const RegionalTally& a, const RegionalTally& b) { return a.count > b.count; });
  return out;
}

inline std::size_t countries_in_region(const std::map<std::string, std::string>& region_of,
                                       const std::string& region) {
  return static_cast<std::size_t>(
      std::count_if(region_of.begin(), region_of.end(), [&](const auto& kv) { return kv.second == region; }));
}

/// Crops appearing in at least `min_country_share` of the region's countries,
/// most frequent first, capped at `max_crops`. `tallies` must be sorted as
/// returned by tally_region.
inline std::vector<RegionalTally> select_regional_crops(const std::vector<RegionalTally>& tallies,
                                                        std::size_t n_countries,
                                                        const RegionalSelectionRule& rule = {}) {
  std::vector<RegionalTally> out;
  const double needed = rule.min_country_share * static_cast<double>(n_countries);
  for (const auto& t : tallies) {
    if (out.size() == rule.max_crops) break;
    if (static_cast<double>(t.count) >= needed) out.push_back(t);
  }
  return out;
}

}  // namespace cropcast
