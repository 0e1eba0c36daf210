#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "mind/layers.hpp"
#include "mind/rng.hpp"
#include "mind/trainer.hpp"

namespace mind {

/// Compares an analytic gradient against central differences
/// (f(x+d) - f(x-d)) / 2d, elementwise over `input`. Returns the maximum
/// relative error; the denominator is floored at 1e-8.
inline double finite_diff_check(const std::function<double(const Tensor&)>& f,
                                const Tensor& input, const Tensor& analytic_grad,
                                double delta = 1e-4) {
  if (delta <= 0.0) throw ShapeError("finite_diff_check: delta must be positive");
  require_same_shape(input, analytic_grad, "finite_diff_check");
  Tensor x = input;
  double worst = 0.0;
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    const double saved = x.data[i];
    x.data[i] = saved + delta;
    const double up = f(x);
    x.data[i] = saved - delta;
    const double down = f(x);
    x.data[i] = saved;
    const double fd = (up - down) / (2.0 * delta);
    const double an = analytic_grad.data[i];
    const double denom = std::max({std::abs(fd), std::abs(an), 1e-8});
    worst = std::max(worst, std::abs(fd - an) / denom);
  }
  return worst;
}

/// Same check over a flat parameter vector (biases, PReLU slopes).
inline double finite_diff_check_vec(const std::function<double(const std::vector<double>&)>& f,
                                    const std::vector<double>& params,
                                    const std::vector<double>& analytic_grad,
                                    double delta = 1e-4) {
  std::vector<double> x = params;
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + delta;
    const double up = f(x);
    x[i] = saved - delta;
    const double down = f(x);
    x[i] = saved;
    const double fd = (up - down) / (2.0 * delta);
    const double an = analytic_grad[i];
    const double denom = std::max({std::abs(fd), std::abs(an), 1e-8});
    worst = std::max(worst, std::abs(fd - an) / denom);
  }
  return worst;
}

/// Relative error of the adjoint identity <L(u), v> == <u, Lt(v)>.
inline double adjoint_error(const Tensor& lu, const Tensor& v,
                            const Tensor& u, const Tensor& ltv) {
  const double lhs = dot(lu, v);
  const double rhs = dot(u, ltv);
  return std::abs(lhs - rhs) / std::max({std::abs(lhs), std::abs(rhs), 1e-8});
}

inline Tensor random_tensor(Rng& rng, int n, int c, int h, int w,
                            double lo = -1.0, double hi = 1.0) {
  Tensor t(n, c, h, w);
  for (double& v : t.data) v = uniform(rng, lo, hi);
  return t;
}

/// Random tensor whose entries keep a margin away from zero, so PReLU
/// derivatives are stable under finite-difference probes.
inline Tensor random_tensor_off_kink(Rng& rng, int n, int c, int h, int w,
                                     double margin) {
  Tensor t(n, c, h, w);
  for (double& v : t.data) {
    do {
      v = uniform(rng, -1.0, 1.0);
    } while (std::abs(v) < margin);
  }
  return t;
}

/// Random tensor whose 2x2 pooling windows have a clear winner (gap above
/// `margin`), so the argmax routing is stable under probes.
inline Tensor random_tensor_off_tie(Rng& rng, int n, int c, int h, int w,
                                    double margin) {
  for (int attempt = 0; attempt < 100; ++attempt) {
    Tensor t = random_tensor(rng, n, c, h, w);
    bool ok = true;
    for (int b = 0; b < n && ok; ++b)
      for (int ch = 0; ch < c && ok; ++ch)
        for (int oy = 0; oy < h / 2 && ok; ++oy)
          for (int ox = 0; ox < w / 2 && ok; ++ox) {
            double top = -1e300, second = -1e300;
            for (int k = 0; k < 4; ++k) {
              const double v = t.at(b, ch, 2 * oy + k / 2, 2 * ox + k % 2);
              if (v > top) {
                second = top;
                top = v;
              } else if (v > second) {
                second = v;
              }
            }
            if (top - second < margin) ok = false;
          }
    if (ok) return t;
  }
  throw NumericError("random_tensor_off_tie: no tie-free sample found");
}

inline LayerParams random_conv_params(Rng& rng, int out_c, int in_c, int k,
                                      LayerKind kind = LayerKind::conv,
                                      bool with_bias = true) {
  LayerParams p = LayerParams::make_conv(out_c, in_c, k, kind);
  for (double& v : p.weights.data) v = uniform(rng, -0.5, 0.5);
  if (with_bias)
    for (double& v : p.bias) v = uniform(rng, -0.2, 0.2);
  return p;
}

// ---------------------------------------------------------------------------
// Full layer-by-layer suite, shared by the test binary and the CLI.

struct GradcheckResult {
  std::string name;
  double max_err = 0.0;
  double tol = 0.0;
  bool pass() const { return max_err < tol; }
};

namespace detail {

inline void record(std::vector<GradcheckResult>& out, const std::string& name,
                   double err, double tol) {
  for (auto& r : out)
    if (r.name == name) {
      r.max_err = std::max(r.max_err, err);
      return;
    }
  out.push_back({name, err, tol});
}

}  // namespace detail

/// Runs finite-difference and adjoint checks over every layer type plus the
/// training loss, for `n_seeds` seeds starting at `base_seed`.
inline std::vector<GradcheckResult> run_gradcheck_suite(std::uint64_t base_seed,
                                                        int n_seeds = 20,
                                                        double delta = 1e-4) {
  const double fd_tol = 1e-4;
  const double adj_tol = 1e-10;
  const double margin = 10.0 * delta;
  std::vector<GradcheckResult> results;

  for (int s = 0; s < n_seeds; ++s) {
    Rng rng(base_seed + static_cast<std::uint64_t>(s));

    // conv2d, the network geometry (k=3, stride 1, pad 1)
    {
      Tensor x = random_tensor(rng, 1, 2, 5, 6);
      LayerParams p = random_conv_params(rng, 3, 2, 3);
      Tensor seed = random_tensor(rng, 1, 3, 5, 6);
      LayerParams scratch = p;
      Tensor gin = conv2d_backward(x, scratch, seed, 1, 1);
      auto f_in = [&](const Tensor& t) { return dot(conv2d(t, p, 1, 1), seed); };
      detail::record(results, "conv2d/input",
                     finite_diff_check(f_in, x, gin, delta), fd_tol);
      auto f_w = [&](const Tensor& wt) {
        LayerParams q = p;
        q.weights = wt;
        return dot(conv2d(x, q, 1, 1), seed);
      };
      Tensor wgrad = p.weights;
      wgrad.data = scratch.weights.grad;
      detail::record(results, "conv2d/weights",
                     finite_diff_check(f_w, p.weights, wgrad, delta), fd_tol);
      auto f_b = [&](const std::vector<double>& b) {
        LayerParams q = p;
        q.bias = b;
        return dot(conv2d(x, q, 1, 1), seed);
      };
      detail::record(results, "conv2d/bias",
                     finite_diff_check_vec(f_b, p.bias, scratch.bias_grad, delta),
                     fd_tol);
    }

    // conv2d with stride 2, no padding
    {
      Tensor x = random_tensor(rng, 2, 2, 7, 9);
      LayerParams p = random_conv_params(rng, 2, 2, 3);
      Tensor seed = random_tensor(rng, 2, 2, 3, 4);
      LayerParams scratch = p;
      Tensor gin = conv2d_backward(x, scratch, seed, 2, 0);
      auto f_in = [&](const Tensor& t) { return dot(conv2d(t, p, 2, 0), seed); };
      detail::record(results, "conv2d_s2/input",
                     finite_diff_check(f_in, x, gin, delta), fd_tol);
    }

    // conv_transpose2d, the network geometry (k=4, stride 2, pad 1)
    {
      Tensor x = random_tensor(rng, 1, 2, 3, 4);
      LayerParams p = random_conv_params(rng, 3, 2, 4, LayerKind::conv_transpose);
      Tensor seed = random_tensor(rng, 1, 3, 6, 8);
      LayerParams scratch = p;
      Tensor gin = conv_transpose2d_backward(x, scratch, seed, 2, 1);
      auto f_in = [&](const Tensor& t) {
        return dot(conv_transpose2d(t, p, 2, 1), seed);
      };
      detail::record(results, "conv_transpose2d/input",
                     finite_diff_check(f_in, x, gin, delta), fd_tol);
      auto f_w = [&](const Tensor& wt) {
        LayerParams q = p;
        q.weights = wt;
        return dot(conv_transpose2d(x, q, 2, 1), seed);
      };
      Tensor wgrad = p.weights;
      wgrad.data = scratch.weights.grad;
      detail::record(results, "conv_transpose2d/weights",
                     finite_diff_check(f_w, p.weights, wgrad, delta), fd_tol);
      auto f_b = [&](const std::vector<double>& b) {
        LayerParams q = p;
        q.bias = b;
        return dot(conv_transpose2d(x, q, 2, 1), seed);
      };
      detail::record(results, "conv_transpose2d/bias",
                     finite_diff_check_vec(f_b, p.bias, scratch.bias_grad, delta),
                     fd_tol);
    }

    // maxpool (probed away from ties)
    {
      Tensor x = random_tensor_off_tie(rng, 1, 3, 8, 8, margin);
      Tensor seed = random_tensor(rng, 1, 3, 4, 4);
      auto pooled = maxpool2x2(x);
      Tensor gin = maxpool2x2_backward(pooled.second, seed);
      auto f = [&](const Tensor& t) { return dot(maxpool2x2(t).first, seed); };
      detail::record(results, "maxpool/input",
                     finite_diff_check(f, x, gin, delta), fd_tol);

      double in_sum = 0.0, out_sum = 0.0;
      for (double v : gin.data) in_sum += v;
      for (double v : seed.data) out_sum += v;
      detail::record(results, "maxpool/grad_mass",
                     std::abs(in_sum - out_sum) /
                         std::max(std::abs(out_sum), 1e-8),
                     1e-12);
    }

    // prelu (probed away from the kink)
    {
      Tensor x = random_tensor_off_kink(rng, 1, 3, 5, 5, margin);
      LayerParams p = LayerParams::make_prelu(3);
      for (double& a : p.slope) a = uniform(rng, 0.05, 0.8);
      Tensor seed = random_tensor(rng, 1, 3, 5, 5);
      LayerParams scratch = p;
      Tensor gin = prelu_backward(x, scratch, seed);
      auto f_in = [&](const Tensor& t) { return dot(prelu(t, p), seed); };
      detail::record(results, "prelu/input",
                     finite_diff_check(f_in, x, gin, delta), fd_tol);
      auto f_a = [&](const std::vector<double>& a) {
        LayerParams q = p;
        q.slope = a;
        return dot(prelu(x, q), seed);
      };
      detail::record(results, "prelu/slope",
                     finite_diff_check_vec(f_a, p.slope, scratch.slope_grad, delta),
                     fd_tol);
    }

    // concat round trip
    {
      Tensor a = random_tensor(rng, 1, 2, 4, 5);
      Tensor b = random_tensor(rng, 1, 3, 4, 5);
      Tensor seed = random_tensor(rng, 1, 5, 4, 5);
      auto [ga, gb] = split_channels(seed, a.c);
      auto f_a = [&](const Tensor& t) { return dot(concat_channels(t, b), seed); };
      detail::record(results, "concat/input",
                     finite_diff_check(f_a, a, ga, delta), fd_tol);
      auto f_b = [&](const Tensor& t) { return dot(concat_channels(a, t), seed); };
      detail::record(results, "concat/input",
                     finite_diff_check(f_b, b, gb, delta), fd_tol);
    }

    // charbonnier loss
    {
      Tensor pred = random_tensor(rng, 1, 3, 4, 6);
      Tensor target = random_tensor(rng, 1, 3, 4, 6);
      auto [loss, grad] = charbonnier_loss(pred, target, 0.1);
      (void)loss;
      auto f = [&](const Tensor& t) {
        return charbonnier_loss(t, target, 0.1).first;
      };
      detail::record(results, "charbonnier/grad",
                     finite_diff_check(f, pred, grad, delta), 1e-6);
    }

    // adjoint identities for the linear layers
    {
      LayerParams p = random_conv_params(rng, 3, 2, 3, LayerKind::conv, false);
      Tensor u = random_tensor(rng, 1, 2, 6, 6);
      Tensor v = random_tensor(rng, 1, 3, 6, 6);
      LayerParams scratch = p;
      detail::record(results, "adjoint/conv2d",
                     adjoint_error(conv2d(u, p, 1, 1), v, u,
                                   conv2d_backward(u, scratch, v, 1, 1, false)),
                     adj_tol);
    }
    {
      LayerParams p = random_conv_params(rng, 2, 3, 4, LayerKind::conv_transpose, false);
      Tensor u = random_tensor(rng, 1, 3, 3, 4);
      Tensor v = random_tensor(rng, 1, 2, 6, 8);
      LayerParams scratch = p;
      detail::record(results, "adjoint/conv_transpose2d",
                     adjoint_error(conv_transpose2d(u, p, 2, 1), v, u,
                                   conv_transpose2d_backward(u, scratch, v, 2, 1, false)),
                     adj_tol);
    }
    {
      Tensor a = random_tensor(rng, 1, 2, 4, 4);
      Tensor b = random_tensor(rng, 1, 3, 4, 4);
      Tensor v = random_tensor(rng, 1, 5, 4, 4);
      auto [ga, gb] = split_channels(v, a.c);
      const double lhs = dot(concat_channels(a, b), v);
      const double rhs = dot(a, ga) + dot(b, gb);
      detail::record(results, "adjoint/concat",
                     std::abs(lhs - rhs) / std::max({std::abs(lhs), std::abs(rhs), 1e-8}),
                     adj_tol);
    }
  }
  return results;
}

inline bool gradcheck_ok(const std::vector<GradcheckResult>& results) {
  for (const auto& r : results)
    if (!r.pass()) return false;
  return true;
}

}  // namespace mind
