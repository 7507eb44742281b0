#pragma once

// Georeferenced lat/lon grids, resampling between resolutions, crop masks and
// zonal sums. Cells are square in degrees; row 0 is the northern edge and
// column 0 the western edge. Overlap areas are planar in degree units.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "cropcast/error.hpp"

namespace cropcast {

/// Kilometre resolutions map to degrees at the equator.
inline constexpr double kDegreesPerKm = 1.0 / 111.32;

struct GridGeometry {
  double origin_lat = 0.0;  // north edge
  double origin_lon = 0.0;  // west edge
  double cell_size_deg = 1.0;
  std::size_t n_rows = 1;
  std::size_t n_cols = 1;

  [[nodiscard]] std::size_t size() const noexcept { return n_rows * n_cols; }
  [[nodiscard]] double south() const noexcept {
    return origin_lat - static_cast<double>(n_rows) * cell_size_deg;
  }
  [[nodiscard]] double east() const noexcept {
    return origin_lon + static_cast<double>(n_cols) * cell_size_deg;
  }
  [[nodiscard]] double cell_center_lat(std::size_t row) const noexcept {
    return origin_lat - (static_cast<double>(row) + 0.5) * cell_size_deg;
  }
  [[nodiscard]] double cell_center_lon(std::size_t col) const noexcept {
    return origin_lon + (static_cast<double>(col) + 0.5) * cell_size_deg;
  }
  [[nodiscard]] bool valid() const noexcept {
    return cell_size_deg > 0.0 && std::isfinite(cell_size_deg) && n_rows >= 1 && n_cols >= 1 &&
           std::isfinite(origin_lat) && std::isfinite(origin_lon);
  }

  friend bool operator==(const GridGeometry&, const GridGeometry&) = default;
};

inline constexpr double kDefaultNodata = -9999.0;

struct GridRaster {
  GridGeometry geo;
  double nodata = kDefaultNodata;
  std::vector<double> values;
  std::string units;

  GridRaster() = default;
  GridRaster(const GridGeometry& g, double fill, double nodata_value = kDefaultNodata,
             std::string unit_label = {})
      : geo(g), nodata(nodata_value), values(g.size(), fill), units(std::move(unit_label)) {}

  [[nodiscard]] std::size_t n_rows() const noexcept { return geo.n_rows; }
  [[nodiscard]] std::size_t n_cols() const noexcept { return geo.n_cols; }
  [[nodiscard]] std::size_t index(std::size_t row, std::size_t col) const noexcept {
    return row * geo.n_cols + col;
  }
  [[nodiscard]] double at(std::size_t row, std::size_t col) const { return values[index(row, col)]; }
  double& at(std::size_t row, std::size_t col) { return values[index(row, col)]; }
  [[nodiscard]] bool is_nodata(double v) const noexcept { return v == nodata; }
  [[nodiscard]] bool valid_at(std::size_t i) const noexcept { return values[i] != nodata; }

  /// Checks every structural invariant; returns false instead of throwing.
  [[nodiscard]] bool valid() const noexcept {
    if (!geo.valid() || values.size() != geo.size()) return false;
    return std::all_of(values.begin(), values.end(),
                       [this](double v) { return v == nodata || std::isfinite(v); });
  }

  friend bool operator==(const GridRaster&, const GridRaster&) = default;
};

struct CropMask {
  GridGeometry geo;
  std::vector<std::uint8_t> cells;  // 1 = crop present

  [[nodiscard]] bool operator[](std::size_t i) const noexcept { return cells[i] != 0; }
  [[nodiscard]] std::size_t count() const noexcept {
    return static_cast<std::size_t>(std::count(cells.begin(), cells.end(), std::uint8_t{1}));
  }
};

struct ZoneMap {
  GridGeometry geo;
  std::vector<int> zone_ids;  // 0 = outside every zone
};

struct ZoneStat {
  double sum = 0.0;
  std::size_t valid_cell_count = 0;

  friend bool operator==(const ZoneStat&, const ZoneStat&) = default;
};

enum class ResampleMethod { nearest, area_weighted };

namespace detail {

inline void require_same_grid(const GridGeometry& a, const GridGeometry& b, const std::string& what) {
  if (!(a == b)) throw Error(Errc::GridMismatch, what);
}

inline void require_valid(const GridRaster& r, const char* what) {
  if (!r.valid()) throw Error(Errc::InvalidConfig, std::string(what) + ": invalid raster");
}

}  // namespace detail

/// Resamples `src` onto `target`.
///
/// `nearest` copies the source cell containing each target cell center, or
/// nodata when the center falls outside the source. `area_weighted` returns
/// the overlap-weighted mean of the intersecting valid source cells; target
/// cells without valid overlap get nodata. Throws NoOverlap when the two
/// bounding boxes do not share positive area.
inline GridRaster resample(const GridRaster& src, const GridGeometry& target, ResampleMethod method) {
  detail::require_valid(src, "resample source");
  if (!target.valid()) throw Error(Errc::InvalidConfig, "resample target geometry invalid");

  const GridGeometry& s = src.geo;
  const double overlap_lat = std::min(s.origin_lat, target.origin_lat) - std::max(s.south(), target.south());
  const double overlap_lon = std::min(s.east(), target.east()) - std::max(s.origin_lon, target.origin_lon);
  if (!(overlap_lat > 0.0) || !(overlap_lon > 0.0)) {
    throw Error(Errc::NoOverlap, "source and target bounding boxes are disjoint");
  }

  GridRaster out(target, src.nodata, src.nodata, src.units);
  const double scale = target.cell_size_deg / s.cell_size_deg;
  // Target edges expressed in fractional source-cell coordinates.
  const double row_offset = (s.origin_lat - target.origin_lat) / s.cell_size_deg;
  const double col_offset = (target.origin_lon - s.origin_lon) / s.cell_size_deg;
  const auto src_rows = static_cast<double>(s.n_rows);
  const auto src_cols = static_cast<double>(s.n_cols);

  for (std::size_t r = 0; r < target.n_rows; ++r) {
    const double y0 = row_offset + static_cast<double>(r) * scale;
    const double y1 = row_offset + static_cast<double>(r + 1) * scale;
    for (std::size_t c = 0; c < target.n_cols; ++c) {
      const double x0 = col_offset + static_cast<double>(c) * scale;
      const double x1 = col_offset + static_cast<double>(c + 1) * scale;
      double& dst = out.values[out.index(r, c)];

      if (method == ResampleMethod::nearest) {
        const double yc = row_offset + (static_cast<double>(r) + 0.5) * scale;
        const double xc = col_offset + (static_cast<double>(c) + 0.5) * scale;
        if (yc < 0.0 || xc < 0.0 || yc >= src_rows || xc >= src_cols) continue;
        dst = src.at(static_cast<std::size_t>(std::floor(yc)), static_cast<std::size_t>(std::floor(xc)));
        continue;
      }

      const double ylo = std::max(y0, 0.0);
      const double yhi = std::min(y1, src_rows);
      const double xlo = std::max(x0, 0.0);
      const double xhi = std::min(x1, src_cols);
      if (!(ylo < yhi) || !(xlo < xhi)) continue;
      const auto i_begin = static_cast<std::size_t>(std::floor(ylo));
      const auto i_end = std::min(s.n_rows, static_cast<std::size_t>(std::ceil(yhi)));
      const auto j_begin = static_cast<std::size_t>(std::floor(xlo));
      const auto j_end = std::min(s.n_cols, static_cast<std::size_t>(std::ceil(xhi)));

      double weighted = 0.0;
      double weight = 0.0;
      for (std::size_t i = i_begin; i < i_end; ++i) {
        const double h = std::min(yhi, static_cast<double>(i + 1)) - std::max(ylo, static_cast<double>(i));
        if (!(h > 0.0)) continue;
        for (std::size_t j = j_begin; j < j_end; ++j) {
          const double w = std::min(xhi, static_cast<double>(j + 1)) - std::max(xlo, static_cast<double>(j));
          if (!(w > 0.0)) continue;
          const double v = src.at(i, j);
          if (v == src.nodata) continue;
          weighted += h * w * v;
          weight += h * w;
        }
      }
      if (weight > 0.0) dst = weighted / weight;
    }
  }
  return out;
}

/// Cell is true iff its value is valid and strictly above `threshold`.
inline CropMask build_crop_mask(const GridRaster& production, double threshold = 0.0) {
  detail::require_valid(production, "build_crop_mask");
  CropMask mask{production.geo, std::vector<std::uint8_t>(production.values.size(), 0)};
  for (std::size_t i = 0; i < production.values.size(); ++i) {
    const double v = production.values[i];
    mask.cells[i] = (v != production.nodata && v > threshold) ? 1 : 0;
  }
  return mask;
}

inline GridRaster apply_mask(const GridRaster& r, const CropMask& m) {
  detail::require_same_grid(r.geo, m.geo, "apply_mask: raster and mask geometry differ");
  GridRaster out = r;
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    if (!m[i]) out.values[i] = out.nodata;
  }
  return out;
}

/// Sum and count of valid cells per nonzero zone, accumulated in row-major
/// order. Zones present in the map but lacking valid cells report (0, 0).
inline std::map<int, ZoneStat> zonal_sum(const GridRaster& r, const ZoneMap& zones) {
  detail::require_same_grid(r.geo, zones.geo, "zonal_sum: raster and zone geometry differ");
  if (zones.zone_ids.size() != r.values.size()) {
    throw Error(Errc::GridMismatch, "zonal_sum: zone map length differs from raster");
  }
  std::map<int, ZoneStat> out;
  for (std::size_t i = 0; i < r.values.size(); ++i) {
    const int z = zones.zone_ids[i];
    if (z == 0) continue;
    ZoneStat& st = out[z];
    const double v = r.values[i];
    if (v == r.nodata) continue;
    st.sum += v;
    ++st.valid_cell_count;
  }
  return out;
}

}  // namespace cropcast
