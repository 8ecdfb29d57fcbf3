#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "seisbench/common.hpp"

namespace seisbench {

// Dense NCHW tensor. T is float (training default) or double (oracle mode).
template <typename T>
struct Tensor4 {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<T> v;

  Tensor4() = default;
  Tensor4(int n_, int c_, int h_, int w_)
      : n(n_), c(c_), h(h_), w(w_), v(static_cast<std::size_t>(n_) * c_ * h_ * w_, T(0)) {
    if (n_ < 1 || c_ < 1 || h_ < 1 || w_ < 1)
      throw ShapeError("Tensor4: all dims must be >= 1");
  }

  std::size_t size() const { return v.size(); }

  T& at(int in, int ic, int ih, int iw) {
    return v[((static_cast<std::size_t>(in) * c + ic) * h + ih) * w + iw];
  }
  T at(int in, int ic, int ih, int iw) const {
    return v[((static_cast<std::size_t>(in) * c + ic) * h + ih) * w + iw];
  }

  T* row(int in, int ic, int ih) {
    return v.data() + ((static_cast<std::size_t>(in) * c + ic) * h + ih) * w;
  }
  const T* row(int in, int ic, int ih) const {
    return v.data() + ((static_cast<std::size_t>(in) * c + ic) * h + ih) * w;
  }

  bool same_shape(const Tensor4& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }

  void fill(T x) { std::fill(v.begin(), v.end(), x); }

  bool all_finite() const {
    for (T x : v)
      if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
  }

  std::string shape_str() const {
    return std::to_string(n) + "x" + std::to_string(c) + "x" +
           std::to_string(h) + "x" + std::to_string(w);
  }
};

}  // namespace seisbench
