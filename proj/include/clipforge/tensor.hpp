#pragma once

#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "clipforge/common.hpp"
#include "clipforge/rng.hpp"

namespace clipforge {

using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

// Dense row-major tensor of doubles. Rank is the shape length; rank-1 vectors
// and rank-3 [C,H,W] images cover almost all uses.
struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(std::move(s)) {
    validate_shape();
    data.assign(static_cast<std::size_t>(shape_numel(shape)), 0.0);
  }
  Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
    validate_shape();
    require(static_cast<std::int64_t>(data.size()) == shape_numel(shape),
            strformat("tensor data size %zu does not match shape %s", data.size(),
                      shape_str(shape).c_str()));
  }

  void validate_shape() const {
    for (std::size_t i = 0; i < shape.size(); ++i) {
      require(shape[i] >= 1, strformat("tensor dimension %zu must be >= 1, got %d", i, shape[i]));
    }
  }

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }

  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  // [C,H,W] accessors.
  double& at3(int c, int y, int x) {
    return data[(static_cast<std::size_t>(c) * shape[1] + y) * shape[2] + x];
  }
  double at3(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * shape[1] + y) * shape[2] + x];
  }
  // [N,M] accessors.
  double& at2(int r, int c) { return data[static_cast<std::size_t>(r) * shape[1] + c]; }
  double at2(int r, int c) const { return data[static_cast<std::size_t>(r) * shape[1] + c]; }

  void fill(double v) { std::fill(data.begin(), data.end(), v); }

  Tensor& operator+=(const Tensor& other) {
    require(shape == other.shape, strformat("tensor shape mismatch in +=: %s vs %s",
                                            shape_str(shape).c_str(), shape_str(other.shape).c_str()));
    for (std::size_t i = 0; i < data.size(); ++i) data[i] += other.data[i];
    return *this;
  }

  Tensor& add_scaled(const Tensor& other, double scale) {
    require(shape == other.shape, strformat("tensor shape mismatch in add_scaled: %s vs %s",
                                            shape_str(shape).c_str(), shape_str(other.shape).c_str()));
    for (std::size_t i = 0; i < data.size(); ++i) data[i] += scale * other.data[i];
    return *this;
  }

  Tensor& operator*=(double scale) {
    for (double& v : data) v *= scale;
    return *this;
  }

  double sum() const { return std::accumulate(data.begin(), data.end(), 0.0); }

  static Tensor zeros(Shape s) { return Tensor(std::move(s)); }

  static Tensor filled(Shape s, double v) {
    Tensor t(std::move(s));
    t.fill(v);
    return t;
  }

  // Uniform init in [-limit, limit].
  static Tensor uniform(Shape s, double limit, Rng& rng) {
    Tensor t(std::move(s));
    for (double& v : t.data) v = rng.uniform(-limit, limit);
    return t;
  }
};

inline void require_shape(const Tensor& t, const Shape& expected, const char* what) {
  require(t.shape == expected, strformat("%s: expected shape %s, got %s", what,
                                         shape_str(expected).c_str(), shape_str(t.shape).c_str()));
}

}  // namespace clipforge
