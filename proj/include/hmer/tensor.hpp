#pragma once

#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace hmer {

// Row-major dense tensor of 64-bit floats.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s) : shape(std::move(s)) {
    data.assign(numel_of(shape), 0.0);
  }
  Tensor(std::vector<std::size_t> s, std::vector<double> d)
      : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != numel_of(shape)) throw std::invalid_argument("tensor shape/data mismatch");
  }

  static std::size_t numel_of(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (const auto d : s) n *= d;
    return n;
  }
  std::size_t numel() const { return data.size(); }
};

}  // namespace hmer
