#ifndef AAD_TENSOR_HPP
#define AAD_TENSOR_HPP

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "aad/common.hpp"
#include "aad/rng.hpp"

namespace aad {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

// Dense row-major N-d array. Plain value type; autodiff bookkeeping lives in
// graph.hpp, not here.
template <typename T>
struct Tensor {
  Shape shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(std::move(s)), data(size_t(shape_numel(shape)), T(0)) {}
  Tensor(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    require(int64_t(data.size()) == shape_numel(shape),
            "tensor data length does not match shape " + shape_str(shape));
  }

  int64_t numel() const { return int64_t(data.size()); }
  int64_t dim(size_t i) const { return shape[i]; }
  int rank() const { return int(shape.size()); }
  bool empty() const { return data.empty(); }

  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }

  T& operator[](int64_t i) { return data[size_t(i)]; }
  const T& operator[](int64_t i) const { return data[size_t(i)]; }

  // 2-d / 3-d / 4-d accessors (row-major)
  T& at(int64_t i, int64_t j) { return data[size_t(i * shape[1] + j)]; }
  const T& at(int64_t i, int64_t j) const { return data[size_t(i * shape[1] + j)]; }
  T& at(int64_t i, int64_t j, int64_t k) {
    return data[size_t((i * shape[1] + j) * shape[2] + k)];
  }
  const T& at(int64_t i, int64_t j, int64_t k) const {
    return data[size_t((i * shape[1] + j) * shape[2] + k)];
  }
  T& at(int64_t i, int64_t j, int64_t k, int64_t l) {
    return data[size_t(((i * shape[1] + j) * shape[2] + k) * shape[3] + l)];
  }
  const T& at(int64_t i, int64_t j, int64_t k, int64_t l) const {
    return data[size_t(((i * shape[1] + j) * shape[2] + k) * shape[3] + l)];
  }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  static Tensor zeros(Shape s) { return Tensor(std::move(s)); }

  static Tensor full(Shape s, T v) {
    Tensor t(std::move(s));
    t.fill(v);
    return t;
  }

  static Tensor uniform(Shape s, Rng& rng, T lo, T hi) {
    Tensor t(std::move(s));
    for (auto& x : t.data) x = T(rng.uniform(double(lo), double(hi)));
    return t;
  }

  static Tensor randn(Shape s, Rng& rng, T stddev = T(1)) {
    Tensor t(std::move(s));
    for (auto& x : t.data) x = T(rng.normal() * double(stddev));
    return t;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = U(data[i]);
    return out;
  }
};

template <typename T>
bool all_finite(const Tensor<T>& t) {
  for (const T& v : t.data)
    if (!std::isfinite(double(v))) return false;
  return true;
}

}  // namespace aad

#endif  // AAD_TENSOR_HPP
