#pragma once

#include <cstddef>
#include <vector>

#include "pianolab/errors.hpp"

namespace pianolab {

/// Dense row-major matrix of doubles. Used for spectrogram frames,
/// piano rolls and prediction grids.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> v;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), v(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return v[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return v[r * cols + c]; }

  const double* row(std::size_t r) const { return v.data() + r * cols; }
  double* row(std::size_t r) { return v.data() + r * cols; }

  std::size_t size() const { return v.size(); }
  bool empty() const { return v.empty(); }

  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
};

inline void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(what) + ": shape mismatch (" + std::to_string(a.rows) + "x" +
                     std::to_string(a.cols) + " vs " + std::to_string(b.rows) + "x" +
                     std::to_string(b.cols) + ")");
}

}  // namespace pianolab
