#pragma once

#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "l2s/error.hpp"
#include "l2s/rng.hpp"

namespace l2s {

// Dense row-major tensor. Rank 1 and 2 cover everything in this codebase;
// attention head views are taken as column slices of rank-2 tensors.
// Values are float in checkpoints and at inference; double is used for
// gradient checking only.
template <typename T>
struct Tensor {
  std::vector<int64_t> shape;
  std::vector<T> data;

  Tensor() = default;
  Tensor(std::vector<int64_t> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {}

  static Tensor zeros(std::vector<int64_t> s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return Tensor(std::move(s), std::vector<T>(static_cast<size_t>(n), T(0)));
  }

  static Tensor full(std::vector<int64_t> s, T v) {
    Tensor t = zeros(std::move(s));
    for (auto& x : t.data) x = v;
    return t;
  }

  static Tensor randn(std::vector<int64_t> s, Rng& rng, T stddev) {
    Tensor t = zeros(std::move(s));
    for (auto& x : t.data) x = static_cast<T>(rng.next_normal()) * stddev;
    return t;
  }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int64_t rank() const { return static_cast<int64_t>(shape.size()); }
  int64_t rows() const { return shape.empty() ? 0 : shape[0]; }
  int64_t cols() const { return rank() < 2 ? (shape.empty() ? 0 : 1) : shape[1]; }

  T& at(int64_t r, int64_t c) { return data[static_cast<size_t>(r * cols() + c)]; }
  const T& at(int64_t r, int64_t c) const { return data[static_cast<size_t>(r * cols() + c)]; }

  const T* row_ptr(int64_t r) const { return data.data() + r * cols(); }
  T* row_ptr(int64_t r) { return data.data() + r * cols(); }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  std::string shape_str() const {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << "]";
    return os.str();
  }

  bool all_finite() const {
    for (T v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

template <typename T, typename U>
Tensor<U> cast_tensor(const Tensor<T>& t) {
  Tensor<U> out;
  out.shape = t.shape;
  out.data.resize(t.data.size());
  for (size_t i = 0; i < t.data.size(); ++i) out.data[i] = static_cast<U>(t.data[i]);
  return out;
}

inline int64_t matmul_flops(int64_t p, int64_t q, int64_t r) { return 2 * p * q * r; }

// out = a . b, a: p x q, b: q x r. Inner-loop order keeps b row accesses
// contiguous so the compiler can vectorize.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions disagree, lhs " + a.shape_str() + " rhs " +
                     b.shape_str());
  }
  const int64_t p = a.rows(), q = a.cols(), r = b.cols();
  Tensor<T> out = Tensor<T>::zeros({p, r});
  for (int64_t i = 0; i < p; ++i) {
    const T* arow = a.row_ptr(i);
    T* orow = out.row_ptr(i);
    for (int64_t k = 0; k < q; ++k) {
      const T av = arow[k];
      const T* brow = b.row_ptr(k);
      for (int64_t j = 0; j < r; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

// out = a . b^T, a: p x q, b: r x q.
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: inner dimensions disagree, lhs " + a.shape_str() + " rhs " +
                     b.shape_str());
  }
  const int64_t p = a.rows(), q = a.cols(), r = b.rows();
  Tensor<T> out = Tensor<T>::zeros({p, r});
  for (int64_t i = 0; i < p; ++i) {
    const T* arow = a.row_ptr(i);
    T* orow = out.row_ptr(i);
    for (int64_t j = 0; j < r; ++j) {
      const T* brow = b.row_ptr(j);
      T acc = T(0);
      for (int64_t k = 0; k < q; ++k) acc += arow[k] * brow[k];
      orow[j] = acc;
    }
  }
  return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  Tensor<T> out = Tensor<T>::zeros({a.cols(), a.rows()});
  for (int64_t i = 0; i < a.rows(); ++i)
    for (int64_t j = 0; j < a.cols(); ++j) out.at(j, i) = a.at(i, j);
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (!a.same_shape(b))
    throw ShapeError("add: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  Tensor<T> out = a;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.data[i];
  return out;
}

// x: m x d, bias: d (rank 1). Broadcast over rows.
template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  if (x.cols() != bias.numel())
    throw ShapeError("add_bias: width " + x.shape_str() + " vs bias " + bias.shape_str());
  Tensor<T> out = x;
  for (int64_t i = 0; i < x.rows(); ++i) {
    T* row = out.row_ptr(i);
    for (int64_t j = 0; j < x.cols(); ++j) row[j] += bias.data[static_cast<size_t>(j)];
  }
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T c) {
  Tensor<T> out = x;
  for (auto& v : out.data) v *= c;
  return out;
}

// Numerically stable row softmax (max subtraction).
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  Tensor<T> out = x;
  const int64_t r = x.rows(), c = x.cols();
  for (int64_t i = 0; i < r; ++i) {
    T* row = out.row_ptr(i);
    T mx = row[0];
    for (int64_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    T sum = T(0);
    for (int64_t j = 0; j < c; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    const T inv = T(1) / sum;
    for (int64_t j = 0; j < c; ++j) row[j] *= inv;
  }
  return out;
}

// Per-row normalization to zero mean / unit variance, then gain and bias.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
  if (x.cols() != gain.numel() || x.cols() != bias.numel())
    throw ShapeError("layer_norm: width mismatch " + x.shape_str());
  Tensor<T> out = x;
  const int64_t r = x.rows(), c = x.cols();
  for (int64_t i = 0; i < r; ++i) {
    const T* in = x.row_ptr(i);
    T* o = out.row_ptr(i);
    T mean = T(0);
    for (int64_t j = 0; j < c; ++j) mean += in[j];
    mean /= static_cast<T>(c);
    T var = T(0);
    for (int64_t j = 0; j < c; ++j) {
      const T d = in[j] - mean;
      var += d * d;
    }
    var /= static_cast<T>(c);
    const T inv = T(1) / std::sqrt(var + eps);
    for (int64_t j = 0; j < c; ++j)
      o[j] = (in[j] - mean) * inv * gain.data[static_cast<size_t>(j)] +
             bias.data[static_cast<size_t>(j)];
  }
  return out;
}

template <typename T>
inline T gelu_scalar(T x) {
  // tanh approximation
  const T k = T(0.7978845608028654);  // sqrt(2/pi)
  const T inner = k * (x + T(0.044715) * x * x * x);
  return T(0.5) * x * (T(1) + std::tanh(inner));
}

template <typename T>
inline T gelu_grad_scalar(T x) {
  const T k = T(0.7978845608028654);
  const T x3 = x * x * x;
  const T inner = k * (x + T(0.044715) * x3);
  const T th = std::tanh(inner);
  const T sech2 = T(1) - th * th;
  return T(0.5) * (T(1) + th) + T(0.5) * x * sech2 * k * (T(1) + T(3) * T(0.044715) * x * x);
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  Tensor<T> out = x;
  for (auto& v : out.data) v = gelu_scalar(v);
  return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> out = x;
  for (auto& v : out.data) v = v > T(0) ? v : T(0);
  return out;
}

// Key positions j with j > i + offset are unreachable from query row i.
// Masked scores are set to a large negative finite value; after max
// subtraction their exp underflows to exactly zero, so masked keys cannot
// perturb unmasked outputs even in the last bit.
template <typename T>
inline constexpr T kMaskValue = T(-1e9);

template <typename T>
Tensor<T> causal_mask(const Tensor<T>& scores, int64_t offset) {
  Tensor<T> out = scores;
  for (int64_t i = 0; i < out.rows(); ++i) {
    T* row = out.row_ptr(i);
    for (int64_t j = i + offset + 1; j < out.cols(); ++j) row[j] = kMaskValue<T>;
  }
  return out;
}

}  // namespace l2s
