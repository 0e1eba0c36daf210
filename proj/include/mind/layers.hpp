#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "mind/tensor.hpp"

namespace mind {

enum class LayerKind : std::uint8_t { conv = 0, conv_transpose = 1, prelu = 2 };

/// Parameters of one layer. Conv-style layers use `weights` (out_c, in_c,
/// kh, kw) and `bias`; the weight gradient lives in weights.grad and the
/// bias gradient in `bias_grad`. PReLU layers use the per-channel `slope`.
struct LayerParams {
  LayerKind kind = LayerKind::conv;
  Tensor weights;
  std::vector<double> bias, bias_grad;
  std::vector<double> slope, slope_grad;

  static LayerParams make_conv(int out_c, int in_c, int k,
                               LayerKind kind = LayerKind::conv) {
    LayerParams p;
    p.kind = kind;
    p.weights = Tensor(out_c, in_c, k, k);
    p.weights.ensure_grad();
    p.bias.assign(out_c, 0.0);
    p.bias_grad.assign(out_c, 0.0);
    return p;
  }

  static LayerParams make_prelu(int channels, double init_slope = 0.25) {
    LayerParams p;
    p.kind = LayerKind::prelu;
    p.slope.assign(channels, init_slope);
    p.slope_grad.assign(channels, 0.0);
    return p;
  }

  int out_channels() const { return weights.n; }
  int in_channels() const { return weights.c; }
  int kernel() const { return weights.h; }

  void zero_grads() {
    weights.zero_grad();
    bias_grad.assign(bias_grad.size(), 0.0);
    slope_grad.assign(slope_grad.size(), 0.0);
  }

  std::size_t param_count() const {
    return weights.size() + bias.size() + slope.size();
  }
};

// ---------------------------------------------------------------------------
// Convolution (cross-correlation convention, zero padding)

inline int conv_out_dim(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

inline Tensor conv2d(const Tensor& input, const LayerParams& p, int stride, int pad) {
  const Tensor& W = p.weights;
  if (input.c != W.c)
    throw ShapeError("conv2d: input channels " + input.shape_str() +
                     " do not match weights " + W.shape_str());
  if (stride < 1 || pad < 0) throw ShapeError("conv2d: bad stride/pad");
  const int oh = conv_out_dim(input.h, W.h, stride, pad);
  const int ow = conv_out_dim(input.w, W.w, stride, pad);
  if (oh <= 0 || ow <= 0)
    throw ShapeError("conv2d: non-positive output dims for input " +
                     input.shape_str() + " kernel " + W.shape_str());

  Tensor out(input.n, W.n, oh, ow);
  for (int b = 0; b < input.n; ++b)
    for (int co = 0; co < W.n; ++co)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          double acc = p.bias[co];
          for (int ci = 0; ci < W.c; ++ci)
            for (int ky = 0; ky < W.h; ++ky) {
              const int iy = oy * stride - pad + ky;
              if (iy < 0 || iy >= input.h) continue;
              for (int kx = 0; kx < W.w; ++kx) {
                const int ix = ox * stride - pad + kx;
                if (ix < 0 || ix >= input.w) continue;
                acc += W.at(co, ci, ky, kx) * input.at(b, ci, iy, ix);
              }
            }
          out.at(b, co, oy, ox) = acc;
        }
  return out;
}

/// Exact adjoint of conv2d. Returns the gradient w.r.t. the input and, when
/// `accumulate` is set, adds the weight/bias gradients into `p`.
inline Tensor conv2d_backward(const Tensor& input, LayerParams& p,
                              const Tensor& grad_out, int stride, int pad,
                              bool accumulate = true) {
  const Tensor& W = p.weights;
  const int oh = conv_out_dim(input.h, W.h, stride, pad);
  const int ow = conv_out_dim(input.w, W.w, stride, pad);
  if (grad_out.n != input.n || grad_out.c != W.n || grad_out.h != oh || grad_out.w != ow)
    throw ShapeError("conv2d_backward: grad shape " + grad_out.shape_str() +
                     " does not match forward output (" + std::to_string(input.n) +
                     "," + std::to_string(W.n) + "," + std::to_string(oh) + "," +
                     std::to_string(ow) + ")");

  Tensor grad_in(input.n, input.c, input.h, input.w);
  for (int b = 0; b < input.n; ++b)
    for (int ci = 0; ci < input.c; ++ci)
      for (int iy = 0; iy < input.h; ++iy)
        for (int ix = 0; ix < input.w; ++ix) {
          double acc = 0.0;
          for (int co = 0; co < W.n; ++co)
            for (int ky = 0; ky < W.h; ++ky) {
              const int ty = iy + pad - ky;
              if (ty < 0 || ty % stride != 0) continue;
              const int oy = ty / stride;
              if (oy >= oh) continue;
              for (int kx = 0; kx < W.w; ++kx) {
                const int tx = ix + pad - kx;
                if (tx < 0 || tx % stride != 0) continue;
                const int ox = tx / stride;
                if (ox >= ow) continue;
                acc += W.at(co, ci, ky, kx) * grad_out.at(b, co, oy, ox);
              }
            }
          grad_in.at(b, ci, iy, ix) = acc;
        }

  if (accumulate) {
    p.weights.ensure_grad();
    for (int co = 0; co < W.n; ++co)
      for (int ci = 0; ci < W.c; ++ci)
        for (int ky = 0; ky < W.h; ++ky)
          for (int kx = 0; kx < W.w; ++kx) {
            double acc = 0.0;
            for (int b = 0; b < input.n; ++b)
              for (int oy = 0; oy < oh; ++oy) {
                const int iy = oy * stride - pad + ky;
                if (iy < 0 || iy >= input.h) continue;
                for (int ox = 0; ox < ow; ++ox) {
                  const int ix = ox * stride - pad + kx;
                  if (ix < 0 || ix >= input.w) continue;
                  acc += grad_out.at(b, co, oy, ox) * input.at(b, ci, iy, ix);
                }
              }
            p.weights.grad[W.index(co, ci, ky, kx)] += acc;
          }
    for (int co = 0; co < W.n; ++co) {
      double acc = 0.0;
      for (int b = 0; b < grad_out.n; ++b)
        for (int oy = 0; oy < oh; ++oy)
          for (int ox = 0; ox < ow; ++ox) acc += grad_out.at(b, co, oy, ox);
      p.bias_grad[co] += acc;
    }
  }
  return grad_in;
}

// ---------------------------------------------------------------------------
// Transposed convolution

inline int conv_transpose_out_dim(int in, int k, int stride, int pad) {
  return stride * (in - 1) + k - 2 * pad;
}

inline Tensor conv_transpose2d(const Tensor& input, const LayerParams& p,
                               int stride, int pad) {
  const Tensor& W = p.weights;
  if (input.c != W.c)
    throw ShapeError("conv_transpose2d: input channels " + input.shape_str() +
                     " do not match weights " + W.shape_str());
  const int oh = conv_transpose_out_dim(input.h, W.h, stride, pad);
  const int ow = conv_transpose_out_dim(input.w, W.w, stride, pad);
  if (oh <= 0 || ow <= 0)
    throw ShapeError("conv_transpose2d: non-positive output dims for input " +
                     input.shape_str());

  Tensor out(input.n, W.n, oh, ow);
  for (int b = 0; b < input.n; ++b) {
    for (int co = 0; co < W.n; ++co) {
      double* obase = &out.data[out.index(b, co, 0, 0)];
      for (std::size_t i = 0; i < static_cast<std::size_t>(oh) * ow; ++i)
        obase[i] = p.bias[co];
    }
    for (int ci = 0; ci < W.c; ++ci)
      for (int y = 0; y < input.h; ++y)
        for (int x = 0; x < input.w; ++x) {
          const double v = input.at(b, ci, y, x);
          for (int co = 0; co < W.n; ++co)
            for (int ky = 0; ky < W.h; ++ky) {
              const int oy = stride * y + ky - pad;
              if (oy < 0 || oy >= oh) continue;
              for (int kx = 0; kx < W.w; ++kx) {
                const int ox = stride * x + kx - pad;
                if (ox < 0 || ox >= ow) continue;
                out.at(b, co, oy, ox) += W.at(co, ci, ky, kx) * v;
              }
            }
        }
  }
  return out;
}

inline Tensor conv_transpose2d_backward(const Tensor& input, LayerParams& p,
                                        const Tensor& grad_out, int stride, int pad,
                                        bool accumulate = true) {
  const Tensor& W = p.weights;
  const int oh = conv_transpose_out_dim(input.h, W.h, stride, pad);
  const int ow = conv_transpose_out_dim(input.w, W.w, stride, pad);
  if (grad_out.n != input.n || grad_out.c != W.n || grad_out.h != oh || grad_out.w != ow)
    throw ShapeError("conv_transpose2d_backward: grad shape " + grad_out.shape_str() +
                     " does not match forward output");

  Tensor grad_in(input.n, input.c, input.h, input.w);
  for (int b = 0; b < input.n; ++b)
    for (int ci = 0; ci < input.c; ++ci)
      for (int y = 0; y < input.h; ++y)
        for (int x = 0; x < input.w; ++x) {
          double acc = 0.0;
          for (int co = 0; co < W.n; ++co)
            for (int ky = 0; ky < W.h; ++ky) {
              const int oy = stride * y + ky - pad;
              if (oy < 0 || oy >= oh) continue;
              for (int kx = 0; kx < W.w; ++kx) {
                const int ox = stride * x + kx - pad;
                if (ox < 0 || ox >= ow) continue;
                acc += W.at(co, ci, ky, kx) * grad_out.at(b, co, oy, ox);
              }
            }
          grad_in.at(b, ci, y, x) = acc;
        }

  if (accumulate) {
    p.weights.ensure_grad();
    for (int co = 0; co < W.n; ++co)
      for (int ci = 0; ci < W.c; ++ci)
        for (int ky = 0; ky < W.h; ++ky)
          for (int kx = 0; kx < W.w; ++kx) {
            double acc = 0.0;
            for (int b = 0; b < input.n; ++b)
              for (int y = 0; y < input.h; ++y) {
                const int oy = stride * y + ky - pad;
                if (oy < 0 || oy >= oh) continue;
                for (int x = 0; x < input.w; ++x) {
                  const int ox = stride * x + kx - pad;
                  if (ox < 0 || ox >= ow) continue;
                  acc += input.at(b, ci, y, x) * grad_out.at(b, co, oy, ox);
                }
              }
            p.weights.grad[W.index(co, ci, ky, kx)] += acc;
          }
    for (int co = 0; co < W.n; ++co) {
      double acc = 0.0;
      for (int b = 0; b < grad_out.n; ++b)
        for (int oy = 0; oy < oh; ++oy)
          for (int ox = 0; ox < ow; ++ox) acc += grad_out.at(b, co, oy, ox);
      p.bias_grad[co] += acc;
    }
  }
  return grad_in;
}

// ---------------------------------------------------------------------------
// 2x2 max pooling, stride 2

/// Winning window offsets recorded by the forward pass. Offsets are
/// row-major within the window (0=(0,0), 1=(0,1), 2=(1,0), 3=(1,1)); ties
/// resolve to the smallest offset.
struct PoolIndex {
  int n = 0, c = 0, in_h = 0, in_w = 0;
  std::vector<std::uint8_t> offset;  // one per output element
};

inline std::pair<Tensor, PoolIndex> maxpool2x2(const Tensor& input) {
  if (input.h % 2 != 0 || input.w % 2 != 0)
    throw ShapeError("maxpool2x2: odd spatial dims " + input.shape_str());
  const int oh = input.h / 2, ow = input.w / 2;
  Tensor out(input.n, input.c, oh, ow);
  PoolIndex idx{input.n, input.c, input.h, input.w, {}};
  idx.offset.resize(out.size());

  std::size_t o = 0;
  for (int b = 0; b < input.n; ++b)
    for (int ch = 0; ch < input.c; ++ch)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox, ++o) {
          double best = input.at(b, ch, 2 * oy, 2 * ox);
          std::uint8_t best_off = 0;
          for (std::uint8_t k = 1; k < 4; ++k) {
            const double v = input.at(b, ch, 2 * oy + k / 2, 2 * ox + k % 2);
            if (v > best) {
              best = v;
              best_off = k;
            }
          }
          out.data[o] = best;
          idx.offset[o] = best_off;
        }
  return {std::move(out), std::move(idx)};
}

/// Routes each output gradient to the stored argmax position.
inline Tensor maxpool2x2_backward(const PoolIndex& idx, const Tensor& grad_out) {
  const int oh = idx.in_h / 2, ow = idx.in_w / 2;
  if (grad_out.n != idx.n || grad_out.c != idx.c || grad_out.h != oh || grad_out.w != ow)
    throw ShapeError("maxpool2x2_backward: grad shape " + grad_out.shape_str() +
                     " does not match pooled output");
  Tensor grad_in(idx.n, idx.c, idx.in_h, idx.in_w);
  std::size_t o = 0;
  for (int b = 0; b < idx.n; ++b)
    for (int ch = 0; ch < idx.c; ++ch)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox, ++o) {
          const std::uint8_t k = idx.offset[o];
          grad_in.at(b, ch, 2 * oy + k / 2, 2 * ox + k % 2) = grad_out.data[o];
        }
  return grad_in;
}

// ---------------------------------------------------------------------------
// PReLU

inline Tensor prelu(const Tensor& input, const LayerParams& p) {
  if (static_cast<int>(p.slope.size()) != input.c)
    throw ShapeError("prelu: slope count " + std::to_string(p.slope.size()) +
                     " does not match channels of " + input.shape_str());
  Tensor out(input.n, input.c, input.h, input.w);
  std::size_t i = 0;
  for (int b = 0; b < input.n; ++b)
    for (int ch = 0; ch < input.c; ++ch) {
      const double a = p.slope[ch];
      const std::size_t plane = static_cast<std::size_t>(input.h) * input.w;
      for (std::size_t k = 0; k < plane; ++k, ++i) {
        const double x = input.data[i];
        out.data[i] = x >= 0.0 ? x : a * x;
      }
    }
  return out;
}

inline Tensor prelu_backward(const Tensor& input, LayerParams& p,
                             const Tensor& grad_out, bool accumulate = true) {
  require_same_shape(input, grad_out, "prelu_backward");
  Tensor grad_in(input.n, input.c, input.h, input.w);
  std::size_t i = 0;
  for (int b = 0; b < input.n; ++b)
    for (int ch = 0; ch < input.c; ++ch) {
      const double a = p.slope[ch];
      double slope_acc = 0.0;
      const std::size_t plane = static_cast<std::size_t>(input.h) * input.w;
      for (std::size_t k = 0; k < plane; ++k, ++i) {
        const double x = input.data[i];
        const double g = grad_out.data[i];
        if (x >= 0.0) {
          grad_in.data[i] = g;
        } else {
          grad_in.data[i] = a * g;
          slope_acc += x * g;
        }
      }
      if (accumulate) p.slope_grad[ch] += slope_acc;
    }
  return grad_in;
}

// ---------------------------------------------------------------------------
// Channel concatenation

inline Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.n != b.n || a.h != b.h || a.w != b.w)
    throw ShapeError("concat_channels: spatial mismatch " + a.shape_str() +
                     " vs " + b.shape_str());
  Tensor out(a.n, a.c + b.c, a.h, a.w);
  const std::size_t plane = static_cast<std::size_t>(a.h) * a.w;
  for (int bn = 0; bn < a.n; ++bn) {
    std::copy_n(a.data.begin() + static_cast<std::size_t>(bn) * a.c * plane,
                static_cast<std::size_t>(a.c) * plane,
                out.data.begin() + static_cast<std::size_t>(bn) * out.c * plane);
    std::copy_n(b.data.begin() + static_cast<std::size_t>(bn) * b.c * plane,
                static_cast<std::size_t>(b.c) * plane,
                out.data.begin() + (static_cast<std::size_t>(bn) * out.c + a.c) * plane);
  }
  return out;
}

/// Adjoint of concat_channels: splits a gradient at channel boundary c_a.
inline std::pair<Tensor, Tensor> split_channels(const Tensor& g, int c_a) {
  if (c_a < 0 || c_a > g.c) throw ShapeError("split_channels: bad boundary");
  Tensor ga(g.n, c_a, g.h, g.w), gb(g.n, g.c - c_a, g.h, g.w);
  const std::size_t plane = static_cast<std::size_t>(g.h) * g.w;
  for (int bn = 0; bn < g.n; ++bn) {
    std::copy_n(g.data.begin() + static_cast<std::size_t>(bn) * g.c * plane,
                static_cast<std::size_t>(c_a) * plane,
                ga.data.begin() + static_cast<std::size_t>(bn) * c_a * plane);
    std::copy_n(g.data.begin() + (static_cast<std::size_t>(bn) * g.c + c_a) * plane,
                static_cast<std::size_t>(g.c - c_a) * plane,
                gb.data.begin() + static_cast<std::size_t>(bn) * (g.c - c_a) * plane);
  }
  return {std::move(ga), std::move(gb)};
}

// ---------------------------------------------------------------------------
// Multi-seed backward kernels
//
// The inversion path back-propagates many single-pixel seeds through one
// shared forward cache. Gradients for k seeds are stored seed-innermost,
// ((c*h + y)*w + x)*k + s, so the inner per-seed loop is contiguous and
// vectorizes; index arithmetic and weight loads amortize over all seeds.
// Each seed's accumulation order matches the serial kernels exactly, so a
// one-seed batch is bit-identical to the serial path.

namespace detail {

struct SeedGrad {
  int c = 0, h = 0, w = 0, k = 0;
  std::vector<double> data;

  SeedGrad() = default;
  SeedGrad(int c_, int h_, int w_, int k_)
      : c(c_), h(h_), w(w_), k(k_),
        data(static_cast<std::size_t>(c_) * h_ * w_ * k_, 0.0) {}

  std::size_t index(int ch, int y, int x) const {
    return ((static_cast<std::size_t>(ch) * h + y) * w + x) * k;
  }
};

template <int K>
inline void conv_bwd_input_k(const Tensor& W, const SeedGrad& gout,
                             int stride, int pad, SeedGrad& gin) {
  const int oh = gout.h, ow = gout.w;
  for (int ci = 0; ci < gin.c; ++ci)
    for (int iy = 0; iy < gin.h; ++iy)
      for (int ix = 0; ix < gin.w; ++ix) {
        double acc[K] = {};
        for (int co = 0; co < W.n; ++co)
          for (int ky = 0; ky < W.h; ++ky) {
            const int ty = iy + pad - ky;
            if (ty < 0 || ty % stride != 0) continue;
            const int oy = ty / stride;
            if (oy >= oh) continue;
            for (int kx = 0; kx < W.w; ++kx) {
              const int tx = ix + pad - kx;
              if (tx < 0 || tx % stride != 0) continue;
              const int ox = tx / stride;
              if (ox >= ow) continue;
              const double wv = W.at(co, ci, ky, kx);
              const double* g = &gout.data[gout.index(co, oy, ox)];
              for (int s = 0; s < K; ++s) acc[s] += wv * g[s];
            }
          }
        double* out = &gin.data[gin.index(ci, iy, ix)];
        for (int s = 0; s < K; ++s) out[s] = acc[s];
      }
}

template <int K>
inline void convt_bwd_input_k(const Tensor& W, const SeedGrad& gout,
                              int stride, int pad, SeedGrad& gin) {
  for (int ci = 0; ci < gin.c; ++ci)
    for (int y = 0; y < gin.h; ++y)
      for (int x = 0; x < gin.w; ++x) {
        double acc[K] = {};
        for (int co = 0; co < W.n; ++co)
          for (int ky = 0; ky < W.h; ++ky) {
            const int oy = stride * y + ky - pad;
            if (oy < 0 || oy >= gout.h) continue;
            for (int kx = 0; kx < W.w; ++kx) {
              const int ox = stride * x + kx - pad;
              if (ox < 0 || ox >= gout.w) continue;
              const double wv = W.at(co, ci, ky, kx);
              const double* g = &gout.data[gout.index(co, oy, ox)];
              for (int s = 0; s < K; ++s) acc[s] += wv * g[s];
            }
          }
        double* out = &gin.data[gin.index(ci, y, x)];
        for (int s = 0; s < K; ++s) out[s] = acc[s];
      }
}

/// `x` is the shared forward activation (n == 1), broadcast over seeds.
template <int K>
inline void prelu_bwd_input_k(const Tensor& x, const std::vector<double>& slope,
                              const SeedGrad& gout, SeedGrad& gin) {
  std::size_t i = 0;
  for (int ch = 0; ch < x.c; ++ch) {
    const double a = slope[ch];
    const std::size_t plane = static_cast<std::size_t>(x.h) * x.w;
    for (std::size_t p = 0; p < plane; ++p, ++i) {
      const double f = x.data[i] >= 0.0 ? 1.0 : a;
      const double* g = &gout.data[i * K];
      double* out = &gin.data[i * K];
      for (int s = 0; s < K; ++s) out[s] = f * g[s];
    }
  }
}

template <int K>
inline void pool_bwd_k(const PoolIndex& idx, const SeedGrad& gout, SeedGrad& gin) {
  std::fill(gin.data.begin(), gin.data.end(), 0.0);
  const int oh = idx.in_h / 2, ow = idx.in_w / 2;
  std::size_t o = 0;
  for (int ch = 0; ch < idx.c; ++ch)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox, ++o) {
        const std::uint8_t k = idx.offset[o];
        const double* g = &gout.data[o * K];
        double* out = &gin.data[gin.index(ch, 2 * oy + k / 2, 2 * ox + k % 2)];
        for (int s = 0; s < K; ++s) out[s] = g[s];
      }
}

/// Channel ranges are contiguous in this layout, so split is two copies.
inline std::pair<SeedGrad, SeedGrad> split_seed_grad(const SeedGrad& g, int c_a) {
  SeedGrad ga(c_a, g.h, g.w, g.k), gb(g.c - c_a, g.h, g.w, g.k);
  std::copy_n(g.data.begin(), ga.data.size(), ga.data.begin());
  std::copy_n(g.data.begin() + ga.data.size(), gb.data.size(), gb.data.begin());
  return {std::move(ga), std::move(gb)};
}

}  // namespace detail
}  // namespace mind
