#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cropcast/error.hpp"
#include "cropcast/raster.hpp"

namespace cropcast {

enum class Parameter { NDVI, LST_DAY, RAIN, ET, PRODUCTION };

/// The four model inputs, in canonical feature order.
inline constexpr std::array<Parameter, 4> kInputParameters = {Parameter::NDVI, Parameter::LST_DAY,
                                                              Parameter::RAIN, Parameter::ET};

inline constexpr std::string_view to_string(Parameter p) noexcept {
  switch (p) {
    case Parameter::NDVI: return "NDVI";
    case Parameter::LST_DAY: return "LST_DAY";
    case Parameter::RAIN: return "RAIN";
    case Parameter::ET: return "ET";
    case Parameter::PRODUCTION: return "PRODUCTION";
  }
  return "?";
}

inline std::optional<Parameter> parse_parameter(std::string_view s) noexcept {
  for (auto p : {Parameter::NDVI, Parameter::LST_DAY, Parameter::RAIN, Parameter::ET, Parameter::PRODUCTION}) {
    if (s == to_string(p)) return p;
  }
  return std::nullopt;
}

/// Native compositing period of each source product, in days (0 = static).
inline constexpr int native_cadence_days(Parameter p) noexcept {
  switch (p) {
    case Parameter::NDVI: return 16;
    case Parameter::LST_DAY: return 8;
    case Parameter::RAIN: return 30;
    case Parameter::ET: return 8;
    case Parameter::PRODUCTION: return 0;
  }
  return 0;
}

/// Native cell size of each source product, in kilometres.
inline constexpr double native_resolution_km(Parameter p) noexcept {
  switch (p) {
    case Parameter::NDVI: return 1.0;
    case Parameter::LST_DAY: return 1.0;
    case Parameter::RAIN: return 5.55;
    case Parameter::ET: return 0.5;
    case Parameter::PRODUCTION: return 10.0;
  }
  return 0.0;
}

/// Co-registered frames of one parameter for one year, at uniform cadence.
struct TimeSeriesStack {
  Parameter parameter = Parameter::NDVI;
  int cadence_days = 16;
  int start_day_of_year = 1;
  int year = 0;
  std::vector<GridRaster> frames;

  [[nodiscard]] int day_of_frame(std::size_t k) const noexcept {
    return start_day_of_year + static_cast<int>(k) * cadence_days;
  }
  [[nodiscard]] std::vector<int> days() const {
    std::vector<int> d(frames.size());
    for (std::size_t k = 0; k < frames.size(); ++k) d[k] = day_of_frame(k);
    return d;
  }
  [[nodiscard]] const GridGeometry& geometry() const {
    if (frames.empty()) throw Error(Errc::EmptyStack, "stack has no frames");
    return frames.front().geo;
  }

  void validate() const {
    if (frames.empty()) throw Error(Errc::EmptyStack, std::string(to_string(parameter)) + " stack is empty");
    if (cadence_days < 1) throw Error(Errc::InvalidConfig, "stack cadence must be >= 1 day");
    for (const auto& f : frames) {
      if (!(f.geo == frames.front().geo)) {
        throw Error(Errc::GridMismatch, std::string(to_string(parameter)) + " frames differ in geometry");
      }
    }
  }
};

}  // namespace cropcast
