#pragma once

// Raster file pair: `<name>.grdh` is a JSON header, `<name>.grd` holds
// n_rows*n_cols row-major IEEE-754 binary32 values, little-endian.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "cropcast/csv.hpp"
#include "cropcast/error.hpp"
#include "cropcast/raster.hpp"
#include "cropcast/timeseries.hpp"

namespace cropcast {

/// Header fields that describe what a layer is rather than where it is.
struct LayerTag {
  std::string parameter;
  int year = 0;
  int day_of_year = 0;

  friend bool operator==(const LayerTag&, const LayerTag&) = default;
};

struct GridFile {
  GridRaster raster;
  LayerTag tag;
};

inline std::filesystem::path payload_path(const std::filesystem::path& header_path) {
  auto p = header_path;
  p.replace_extension(".grd");
  return p;
}

inline std::vector<std::uint8_t> encode_payload(const GridRaster& r) {
  std::vector<std::uint8_t> bytes;
  bytes.reserve(r.values.size() * 4);
  for (double v : r.values) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
    for (int shift = 0; shift < 32; shift += 8) bytes.push_back(static_cast<std::uint8_t>(bits >> shift));
  }
  return bytes;
}

inline nlohmann::ordered_json header_json(const GridRaster& r, const LayerTag& tag) {
  nlohmann::ordered_json h;
  h["origin_lat"] = r.geo.origin_lat;
  h["origin_lon"] = r.geo.origin_lon;
  h["cell_size_deg"] = r.geo.cell_size_deg;
  h["n_rows"] = r.geo.n_rows;
  h["n_cols"] = r.geo.n_cols;
  h["nodata"] = r.nodata;
  h["units"] = r.units;
  h["parameter"] = tag.parameter;
  h["year"] = tag.year;
  h["day_of_year"] = tag.day_of_year;
  return h;
}

inline void write_grid(const GridRaster& r, const std::filesystem::path& header_path, const LayerTag& tag = {}) {
  if (!r.valid()) throw Error(Errc::InvalidConfig, "write_grid: invalid raster for " + header_path.string());
  if (header_path.has_parent_path()) std::filesystem::create_directories(header_path.parent_path());
  csv::write_file(header_path.string(), header_json(r, tag).dump(2) + "\n");
  const auto bytes = encode_payload(r);
  csv::write_file(payload_path(header_path).string(),
                  std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

inline GridFile read_grid_file(const std::filesystem::path& header_path) {
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(csv::read_file(header_path.string()));
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ParseError, header_path.string() + ": " + e.what());
  }

  GridFile out;
  GridRaster& r = out.raster;
  try {
    r.geo.origin_lat = h.at("origin_lat").get<double>();
    r.geo.origin_lon = h.at("origin_lon").get<double>();
    r.geo.cell_size_deg = h.at("cell_size_deg").get<double>();
    const auto rows = h.at("n_rows").get<long long>();
    const auto cols = h.at("n_cols").get<long long>();
    if (rows < 1 || cols < 1) throw Error(Errc::ParseError, header_path.string() + ": non-positive shape");
    r.geo.n_rows = static_cast<std::size_t>(rows);
    r.geo.n_cols = static_cast<std::size_t>(cols);
    r.nodata = h.at("nodata").get<double>();
    r.units = h.value("units", std::string{});
    out.tag.parameter = h.value("parameter", std::string{});
    out.tag.year = h.value("year", 0);
    out.tag.day_of_year = h.value("day_of_year", 0);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ParseError, header_path.string() + ": " + e.what());
  }
  if (!r.geo.valid()) throw Error(Errc::ParseError, header_path.string() + ": invalid georeferencing");

  const std::string payload = csv::read_file(payload_path(header_path).string());
  if (payload.size() != r.geo.size() * 4) {
    throw Error(Errc::HeaderMismatch, payload_path(header_path).string() + ": payload has " +
                                          std::to_string(payload.size()) + " bytes, header implies " +
                                          std::to_string(r.geo.size() * 4));
  }
  const float nodata32 = static_cast<float>(r.nodata);
  r.values.resize(r.geo.size());
  for (std::size_t i = 0; i < r.values.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) {
      bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(payload[i * 4 + b])) << (8 * b);
    }
    const float v = std::bit_cast<float>(bits);
    r.values[i] = (v == nodata32) ? r.nodata : static_cast<double>(v);
  }
  if (!r.valid()) throw Error(Errc::ParseError, header_path.string() + ": payload holds non-finite values");
  return out;
}

inline GridRaster read_grid(const std::filesystem::path& header_path) {
  return read_grid_file(header_path).raster;
}

// ---------------------------------------------------------------------------
// Stack directories: one file pair per frame, `<PARAM>_<year>_<doy>.grdh`
// with a zero-padded three-digit day of year.

inline std::string frame_stem(Parameter p, int year, int day_of_year) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%d_%03d", std::string(to_string(p)).c_str(), year, day_of_year);
  return buf;
}

inline void write_stack(const TimeSeriesStack& stack, const std::filesystem::path& dir) {
  stack.validate();
  for (std::size_t k = 0; k < stack.frames.size(); ++k) {
    const int doy = stack.day_of_frame(k);
    write_grid(stack.frames[k], dir / (frame_stem(stack.parameter, stack.year, doy) + ".grdh"),
               LayerTag{std::string(to_string(stack.parameter)), stack.year, doy});
  }
}

/// Day-of-year -> header path for every frame of `p` in `year` found in `dir`.
inline std::map<int, std::filesystem::path> list_frames(const std::filesystem::path& dir, Parameter p, int year) {
  std::map<int, std::filesystem::path> found;
  if (!std::filesystem::is_directory(dir)) throw Error(Errc::IoError, "not a directory: " + dir.string());
  const std::string prefix = std::string(to_string(p)) + "_" + std::to_string(year) + "_";
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const auto name = entry.path().filename().string();
    if (entry.path().extension() != ".grdh" || !name.starts_with(prefix)) continue;
    const auto stem = entry.path().stem().string();
    const auto doy = csv::to_int(std::string_view(stem).substr(prefix.size()), "frame file name");
    found.emplace(static_cast<int>(doy), entry.path());
  }
  return found;
}

/// Years for which `dir` holds at least one frame of `p`, ascending.
inline std::vector<int> list_years(const std::filesystem::path& dir, Parameter p) {
  std::vector<int> years;
  if (!std::filesystem::is_directory(dir)) throw Error(Errc::IoError, "not a directory: " + dir.string());
  const std::string prefix = std::string(to_string(p)) + "_";
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const auto stem = entry.path().stem().string();
    if (entry.path().extension() != ".grdh" || !stem.starts_with(prefix)) continue;
    const auto rest = std::string_view(stem).substr(prefix.size());
    const auto sep = rest.find('_');
    if (sep == std::string_view::npos) continue;
    years.push_back(static_cast<int>(csv::to_int(rest.substr(0, sep), "frame file name")));
  }
  std::sort(years.begin(), years.end());
  years.erase(std::unique(years.begin(), years.end()), years.end());
  return years;
}

/// Reads the frames of `p` for `year`. Frames must be evenly spaced; the
/// cadence is inferred from the spacing (or the native cadence for a single
/// frame). Frames after `last_day` are ignored.
inline TimeSeriesStack read_stack(const std::filesystem::path& dir, Parameter p, int year, int last_day = 366) {
  const auto frames = list_frames(dir, p, year);
  TimeSeriesStack stack;
  stack.parameter = p;
  stack.year = year;
  stack.cadence_days = native_cadence_days(p) > 0 ? native_cadence_days(p) : 1;
  std::vector<int> days;
  for (const auto& [doy, path] : frames) {
    if (doy > last_day) continue;
    days.push_back(doy);
    stack.frames.push_back(read_grid(path));
  }
  if (stack.frames.empty()) {
    throw Error(Errc::EmptyStack, "no " + std::string(to_string(p)) + " frames for " + std::to_string(year) +
                                      " in " + dir.string());
  }
  stack.start_day_of_year = days.front();
  if (days.size() > 1) stack.cadence_days = days[1] - days[0];
  for (std::size_t k = 1; k < days.size(); ++k) {
    if (days[k] - days[k - 1] != stack.cadence_days) {
      throw Error(Errc::ParseError, std::string(to_string(p)) + " frames in " + dir.string() +
                                        " are not evenly spaced");
    }
  }
  stack.validate();
  return stack;
}

}  // namespace cropcast
