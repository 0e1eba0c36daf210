#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "mind/error.hpp"

namespace mind {

/// Dense 4-D array (batch, channel, height, width), row-major with the
/// width index fastest. `grad` is an optional buffer of identical shape;
/// it stays empty until a gradient is accumulated into it.
struct Tensor {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<double> data;
  std::vector<double> grad;

  Tensor() = default;
  Tensor(int n_, int c_, int h_, int w_)
      : n(n_), c(c_), h(h_), w(w_),
        data(static_cast<std::size_t>(n_) * c_ * h_ * w_, 0.0) {}

  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }

  std::size_t index(int b, int ch, int y, int x) const {
    return ((static_cast<std::size_t>(b) * c + ch) * h + y) * w + x;
  }
  double& at(int b, int ch, int y, int x) { return data[index(b, ch, y, x)]; }
  double at(int b, int ch, int y, int x) const { return data[index(b, ch, y, x)]; }

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
  void zero_grad() { grad.assign(data.size(), 0.0); }

  bool same_shape(const Tensor& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }
  std::string shape_str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," +
           std::to_string(h) + "," + std::to_string(w) + ")";
  }
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(what) + ": shape mismatch " + a.shape_str() +
                     " vs " + b.shape_str());
}

inline bool all_finite(const Tensor& t) {
  for (double v : t.data)
    if (!std::isfinite(v)) return false;
  return true;
}

inline double dot(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) s += a.data[i] * b.data[i];
  return s;
}

inline double max_abs(const Tensor& t) {
  double m = 0.0;
  for (double v : t.data) m = std::max(m, std::abs(v));
  return m;
}

/// Concatenate two batches along n. Shapes must agree on (c, h, w).
inline Tensor stack_batch(const std::vector<const Tensor*>& parts) {
  if (parts.empty()) throw ShapeError("stack_batch: no tensors");
  const Tensor& first = *parts.front();
  int total = 0;
  for (const Tensor* t : parts) {
    if (t->c != first.c || t->h != first.h || t->w != first.w)
      throw ShapeError("stack_batch: member shape mismatch " + t->shape_str() +
                       " vs " + first.shape_str());
    total += t->n;
  }
  Tensor out(total, first.c, first.h, first.w);
  std::size_t off = 0;
  for (const Tensor* t : parts) {
    std::copy(t->data.begin(), t->data.end(), out.data.begin() + off);
    off += t->data.size();
  }
  return out;
}

}  // namespace mind
