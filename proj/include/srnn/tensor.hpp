#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "srnn/errors.hpp"
#include "srnn/rng.hpp"

namespace srnn {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

// Dense row-major n-d array. The one value type for images, activations,
// parameters and gradients.
template <typename T>
struct Tensor {
  Shape shape;
  std::vector<T> data;

  Tensor() = default;

  explicit Tensor(Shape s, T fill = T(0))
      : shape(std::move(s)), data(shape_numel(shape), fill) {
    check_extents();
  }

  Tensor(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    check_extents();
    if (shape_numel(shape) != data.size())
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
  }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t dim(std::size_t i) const { return shape[i]; }

  T& operator[](std::size_t i) { return data[i]; }
  const T& operator[](std::size_t i) const { return data[i]; }

  T& at(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
  const T& at(std::size_t i, std::size_t j) const {
    return data[i * shape[1] + j];
  }

  T& at(std::size_t b, std::size_t c, std::size_t y, std::size_t x) {
    return data[((b * shape[1] + c) * shape[2] + y) * shape[3] + x];
  }
  const T& at(std::size_t b, std::size_t c, std::size_t y,
              std::size_t x) const {
    return data[((b * shape[1] + c) * shape[2] + y) * shape[3] + x];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

 private:
  void check_extents() const {
    for (std::size_t d : shape)
      if (d == 0) throw ShapeError("zero extent in shape " + shape_str(shape));
  }
};

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b,
                        const char* op) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_str(a.shape) + " vs " + shape_str(b.shape));
}

template <typename T>
Tensor<T> identity_matrix(std::size_t n) {
  Tensor<T> t({n, n});
  for (std::size_t i = 0; i < n; ++i) t.at(i, i) = T(1);
  return t;
}

template <typename T>
Tensor<T> rand_uniform(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<T> t(std::move(s));
  for (auto& v : t.data) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

template <typename T>
Tensor<T> rand_normal(Shape s, Rng& rng, double stddev = 1.0) {
  Tensor<T> t(std::move(s));
  for (auto& v : t.data) v = static_cast<T>(stddev * rng.normal());
  return t;
}

template <typename T>
bool all_finite(const Tensor<T>& t) {
  for (T v : t.data)
    if (!std::isfinite(static_cast<double>(v))) return false;
  return true;
}

}  // namespace srnn
