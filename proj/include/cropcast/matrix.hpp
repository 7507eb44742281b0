#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <vector>

#include "cropcast/error.hpp"

namespace cropcast {

/// Dense row-major matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  static Matrix from_rows(const std::vector<std::vector<double>>& rs) {
    Matrix m(rs.size(), rs.empty() ? 0 : rs.front().size());
    for (std::size_t i = 0; i < rs.size(); ++i) {
      if (rs[i].size() != m.cols) throw Error(Errc::DimensionMismatch, "ragged rows");
      for (std::size_t j = 0; j < m.cols; ++j) m(i, j) = rs[i][j];
    }
    return m;
  }

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

  std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }
  [[nodiscard]] std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }

  void append_row(std::span<const double> r) {
    if (rows == 0 && cols == 0) cols = r.size();
    if (r.size() != cols) throw Error(Errc::DimensionMismatch, "append_row: width differs");
    data.insert(data.end(), r.begin(), r.end());
    ++rows;
  }

  [[nodiscard]] Matrix select_rows(std::span<const std::size_t> idx) const {
    Matrix out(idx.size(), cols);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const auto src = row(idx[i]);
      std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

}  // namespace cropcast
