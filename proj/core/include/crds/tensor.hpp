#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <vector>

#include "crds/errors.hpp"

namespace crds {

// Dense row-major tensor. Feature maps use (channels, height, width).
template <typename T>
struct Tensor {
  std::vector<int> dims;
  std::vector<T> v;

  Tensor() = default;
  explicit Tensor(std::vector<int> d) : dims(std::move(d)) {
    v.assign(static_cast<size_t>(numel()), T(0));
  }
  Tensor(std::initializer_list<int> d) : Tensor(std::vector<int>(d)) {}

  static Tensor zeros(std::vector<int> d) { return Tensor(std::move(d)); }
  static Tensor full(std::vector<int> d, T value) {
    Tensor t(std::move(d));
    for (auto& x : t.v) x = value;
    return t;
  }
  static Tensor scalar(T value) { return full({1}, value); }

  int64_t numel() const {
    int64_t n = 1;
    for (int d : dims) n *= d;
    return dims.empty() ? 0 : n;
  }
  bool empty() const { return v.empty(); }

  int dim(size_t i) const { return dims[i]; }

  T* data() { return v.data(); }
  const T* data() const { return v.data(); }

  T& operator[](size_t i) { return v[i]; }
  const T& operator[](size_t i) const { return v[i]; }

  // (c,h,w) accessor for 3-d tensors.
  T& at(int c, int y, int x) {
    return v[(static_cast<size_t>(c) * dims[1] + y) * dims[2] + x];
  }
  const T& at(int c, int y, int x) const {
    return v[(static_cast<size_t>(c) * dims[1] + y) * dims[2] + x];
  }

  bool same_shape(const Tensor& o) const { return dims == o.dims; }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.dims = dims;
    out.v.resize(v.size());
    for (size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<U>(v[i]);
    return out;
  }
};

template <typename T>
inline void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (!a.same_shape(b)) throw InvalidArgument(std::string(what) + ": shape mismatch");
}

}  // namespace crds
