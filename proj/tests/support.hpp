#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "cropcast/raster.hpp"
#include "cropcast/rng.hpp"

namespace testing_support {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() / ("cropcast_" + tag + "_" + std::to_string(counter()++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  static int& counter() {
    static int c = 0;
    return c;
  }
  std::filesystem::path path_;
};

inline cropcast::GridRaster random_raster(cropcast::Rng& rng, std::size_t rows, std::size_t cols,
                                          double nodata_prob = 0.0) {
  cropcast::GridGeometry g{rng.uniform(-10, 10), rng.uniform(-10, 10), rng.uniform(0.05, 1.0), rows, cols};
  cropcast::GridRaster r(g, 0.0);
  for (auto& v : r.values) v = rng.uniform() < nodata_prob ? r.nodata : std::round(rng.uniform(-1000, 1000) * 8) / 8;
  return r;
}

}  // namespace testing_support
