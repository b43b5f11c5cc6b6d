#pragma once

// Dense row-major tensors and the small math kernels shared by the autodiff
// tape and the inference-mode forward pass (same kernels, same op order, so
// the two paths agree bitwise).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "fwlab/rng.hpp"

namespace fwlab {

template <typename T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)), data(numel_of(shape), T(0)) {}
  Tensor(std::vector<int> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    if (static_cast<size_t>(numel_of(shape)) != data.size())
      throw std::invalid_argument("tensor data length does not match shape");
  }

  static int64_t numel_of(const std::vector<int>& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
  }
  int64_t numel() const { return static_cast<int64_t>(data.size()); }

  int rows() const { return shape.size() == 2 ? shape[0] : (shape.empty() ? 0 : shape[0]); }
  int cols() const { return shape.size() == 2 ? shape[1] : 1; }

  T& operator()(int i, int j) { return data[static_cast<size_t>(i) * cols() + j]; }
  const T& operator()(int i, int j) const { return data[static_cast<size_t>(i) * cols() + j]; }

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
  static Tensor full(std::vector<int> s, T v) {
    Tensor t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }
  static Tensor uniform(std::vector<int> s, Rng& rng, double lo, double hi) {
    Tensor t(std::move(s));
    for (auto& x : t.data) x = static_cast<T>(rng.uniform_real(lo, hi));
    return t;
  }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }
  bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (!a.same_shape(b)) throw std::invalid_argument(std::string(what) + ": shape mismatch");
}

// C = A * B (or += when accumulate), A [m,k], B [k,n].
template <typename T>
void matmul_into(Tensor<T>& c, const Tensor<T>& a, const Tensor<T>& b, bool accumulate = false) {
  const int m = a.shape[0], k = a.shape[1], n = b.shape[1];
  if (b.shape[0] != k) throw std::invalid_argument("matmul: inner dimensions disagree");
  if (c.shape != std::vector<int>{m, n}) throw std::invalid_argument("matmul: bad output shape");
  if (!accumulate) c.fill(T(0));
  const T* pa = a.data.data();
  const T* pb = b.data.data();
  T* pc = c.data.data();
  for (int i = 0; i < m; ++i) {
    for (int p = 0; p < k; ++p) {
      const T aip = pa[static_cast<size_t>(i) * k + p];
      if (aip == T(0)) continue;
      const T* brow = pb + static_cast<size_t>(p) * n;
      T* crow = pc + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  Tensor<T> c({a.shape[0], b.shape[1]});
  matmul_into(c, a, b);
  return c;
}

// dA += dC * B^T without materializing the transpose.
template <typename T>
void matmul_acc_bt(Tensor<T>& da, const Tensor<T>& dc, const Tensor<T>& b) {
  const int m = dc.shape[0], n = dc.shape[1], k = b.shape[0];
  for (int i = 0; i < m; ++i) {
    const T* dcrow = dc.data.data() + static_cast<size_t>(i) * n;
    T* darow = da.data.data() + static_cast<size_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const T* brow = b.data.data() + static_cast<size_t>(p) * n;
      T acc = T(0);
      for (int j = 0; j < n; ++j) acc += dcrow[j] * brow[j];
      darow[p] += acc;
    }
  }
}

// dB += A^T * dC without materializing the transpose.
template <typename T>
void matmul_acc_at(Tensor<T>& db, const Tensor<T>& a, const Tensor<T>& dc) {
  const int m = a.shape[0], k = a.shape[1], n = dc.shape[1];
  for (int i = 0; i < m; ++i) {
    const T* arow = a.data.data() + static_cast<size_t>(i) * k;
    const T* dcrow = dc.data.data() + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const T aip = arow[p];
      if (aip == T(0)) continue;
      T* dbrow = db.data.data() + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) dbrow[j] += aip * dcrow[j];
    }
  }
}

template <typename T>
void softmax_rows_into(Tensor<T>& out, const Tensor<T>& x) {
  const int m = x.shape[0], n = x.shape[1];
  for (int i = 0; i < m; ++i) {
    const T* row = x.data.data() + static_cast<size_t>(i) * n;
    T* orow = out.data.data() + static_cast<size_t>(i) * n;
    T mx = row[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    T sum = T(0);
    for (int j = 0; j < n; ++j) {
      orow[j] = std::exp(row[j] - mx);
      sum += orow[j];
    }
    const T inv = T(1) / sum;
    for (int j = 0; j < n; ++j) orow[j] *= inv;
  }
}

template <typename T>
T elu_scalar(T x) {
  return x >= T(0) ? x : std::expm1(x);
}

template <typename T>
T sigmoid_scalar(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

// out = x (*) y with y either the same shape, a [1,n] row to broadcast over
// rows, or a [1,1] scalar.
template <typename T, typename F>
void broadcast_binary_into(Tensor<T>& out, const Tensor<T>& x, const Tensor<T>& y, F&& f) {
  const int m = x.shape[0], n = x.shape[1];
  if (y.same_shape(x)) {
    for (size_t i = 0; i < x.data.size(); ++i) out.data[i] = f(x.data[i], y.data[i]);
  } else if (y.shape == std::vector<int>{1, n}) {
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) out(i, j) = f(x(i, j), y.data[j]);
  } else if (y.numel() == 1) {
    const T s = y.data[0];
    for (size_t i = 0; i < x.data.size(); ++i) out.data[i] = f(x.data[i], s);
  } else {
    throw std::invalid_argument("binary op: incompatible shapes");
  }
}

// Same-padding 2D convolution on [H,W,C] feature maps with an
// [kh,kw,Cin,Cout] kernel.
template <typename T>
void conv2d_into(Tensor<T>& out, const Tensor<T>& input, const Tensor<T>& kernel, int stride) {
  const int h = input.shape[0], w = input.shape[1], cin = input.shape[2];
  const int kh = kernel.shape[0], kw = kernel.shape[1], cout = kernel.shape[3];
  if (kernel.shape[2] != cin) throw std::invalid_argument("conv2d: channel mismatch");
  const int oh = (h + stride - 1) / stride, ow = (w + stride - 1) / stride;
  if (out.shape != std::vector<int>{oh, ow, cout})
    throw std::invalid_argument("conv2d: bad output shape");
  out.fill(T(0));
  const int ph = (kh - 1) / 2, pw = (kw - 1) / 2;
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      T* opix = out.data.data() + (static_cast<size_t>(oy) * ow + ox) * cout;
      for (int ky = 0; ky < kh; ++ky) {
        const int iy = oy * stride + ky - ph;
        if (iy < 0 || iy >= h) continue;
        for (int kx = 0; kx < kw; ++kx) {
          const int ix = ox * stride + kx - pw;
          if (ix < 0 || ix >= w) continue;
          const T* ipix = input.data.data() + (static_cast<size_t>(iy) * w + ix) * cin;
          const T* kslice =
              kernel.data.data() + (static_cast<size_t>(ky) * kw + kx) * cin * cout;
          for (int ci = 0; ci < cin; ++ci) {
            const T iv = ipix[ci];
            if (iv == T(0)) continue;
            const T* krow = kslice + static_cast<size_t>(ci) * cout;
            for (int co = 0; co < cout; ++co) opix[co] += iv * krow[co];
          }
        }
      }
    }
  }
}

template <typename T>
bool all_finite(const Tensor<T>& t) {
  for (T v : t.data)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace fwlab
