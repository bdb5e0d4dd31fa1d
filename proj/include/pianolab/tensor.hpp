#pragma once

#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "pianolab/errors.hpp"

namespace pianolab::nn {

/// Row-major tensor of doubles with up to 4 dims. Rank 2 is (batch, units),
/// rank 4 is (batch, channels, time, freq).
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> v;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s, double fill = 0.0) : shape(std::move(s)) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    v.assign(n, fill);
  }

  std::size_t size() const { return v.size(); }
  std::size_t rank() const { return shape.size(); }
  bool empty() const { return v.empty(); }

  double& at2(std::size_t i, std::size_t j) { return v[i * shape[1] + j]; }
  double at2(std::size_t i, std::size_t j) const { return v[i * shape[1] + j]; }

  double& at4(std::size_t b, std::size_t c, std::size_t t, std::size_t f) {
    return v[((b * shape[1] + c) * shape[2] + t) * shape[3] + f];
  }
  double at4(std::size_t b, std::size_t c, std::size_t t, std::size_t f) const {
    return v[((b * shape[1] + c) * shape[2] + t) * shape[3] + f];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  std::string shape_str() const {
    std::string s = "(";
    for (std::size_t i = 0; i < shape.size(); ++i)
      s += (i ? "," : "") + std::to_string(shape[i]);
    return s + ")";
  }
};

}  // namespace pianolab::nn
