#pragma once

#include <cmath>
#include <string>

#include "ivf/common.hpp"

namespace ivf {

// Dense CHW map. Channel-major, row-major within a channel.
template <class T>
struct TensorT {
  int c = 0, h = 0, w = 0;
  AlignedVec<T> v;

  TensorT() = default;
  TensorT(int c_, int h_, int w_) : c(c_), h(h_), w(w_), v(static_cast<size_t>(c_) * h_ * w_, T(0)) {}

  static TensorT full(int c, int h, int w, T value) {
    TensorT t(c, h, w);
    for (auto& x : t.v) x = value;
    return t;
  }

  size_t size() const { return static_cast<size_t>(c) * h * w; }
  size_t plane() const { return static_cast<size_t>(h) * w; }

  T* data() { return v.data(); }
  const T* data() const { return v.data(); }

  T& at(int ci, int y, int x) { return v[(static_cast<size_t>(ci) * h + y) * w + x]; }
  const T& at(int ci, int y, int x) const { return v[(static_cast<size_t>(ci) * h + y) * w + x]; }

  bool same_shape(const TensorT& o) const { return c == o.c && h == o.h && w == o.w; }

  void fill(T value) {
    for (auto& x : v) x = value;
  }

  void zero() { fill(T(0)); }

  bool all_finite() const {
    for (T x : v)
      if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
  }

  T min() const {
    T m = v.empty() ? T(0) : v[0];
    for (T x : v) m = x < m ? x : m;
    return m;
  }
  T max() const {
    T m = v.empty() ? T(0) : v[0];
    for (T x : v) m = x > m ? x : m;
    return m;
  }

  double sum() const {
    double s = 0;
    for (T x : v) s += static_cast<double>(x);
    return s;
  }

  template <class U>
  TensorT<U> cast() const {
    TensorT<U> o(c, h, w);
    for (size_t i = 0; i < v.size(); ++i) o.v[i] = static_cast<U>(v[i]);
    return o;
  }

  std::string shape_str() const {
    return "[" + std::to_string(c) + "," + std::to_string(h) + "," + std::to_string(w) + "]";
  }
};

using Tensor = TensorT<float>;
using DTensor = TensorT<double>;

template <class T>
inline void check_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* what) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(what) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

template <class T>
inline void check_spatial_match(const TensorT<T>& a, int h, int w, const char* what) {
  if (a.h != h || a.w != w)
    throw ShapeError(std::string(what) + ": spatial mismatch " + a.shape_str() + " vs [" + std::to_string(h) +
                     "," + std::to_string(w) + "]");
}

}  // namespace ivf
