#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "owgr/common.hpp"

namespace owgr {

// Row-major dense array of 64-bit floats.
struct TensorBuffer {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  TensorBuffer() = default;

  explicit TensorBuffer(std::vector<std::size_t> s) : shape(std::move(s)) {
    data.assign(numel_of(shape), 0.0);
  }

  TensorBuffer(std::initializer_list<std::size_t> s)
      : TensorBuffer(std::vector<std::size_t>(s)) {}

  std::size_t numel() const { return data.size(); }

  static std::size_t numel_of(const std::vector<std::size_t>& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1},
                           std::multiplies<>());
  }

  double& at2(std::size_t i, std::size_t j) {
    return data[i * shape[1] + j];
  }
  double at2(std::size_t i, std::size_t j) const {
    return data[i * shape[1] + j];
  }

  double& at3(std::size_t i, std::size_t j, std::size_t k) {
    return data[(i * shape[1] + j) * shape[2] + k];
  }
  double at3(std::size_t i, std::size_t j, std::size_t k) const {
    return data[(i * shape[1] + j) * shape[2] + k];
  }

  void check_finite(const std::string& where) const {
    for (double v : data) {
      if (!std::isfinite(v)) {
        throw NumericsError("non-finite value in " + where);
      }
    }
  }
};

}  // namespace owgr
