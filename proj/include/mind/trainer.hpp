#pragma once

#include <cmath>
#include <functional>
#include <iostream>
#include <vector>

#include "mind/net.hpp"
#include "mind/rng.hpp"

namespace mind {

// ---------------------------------------------------------------------------
// Triplet construction

enum class FlipMode : std::uint8_t { none = 0, vertical = 1, horizontal = 2, both = 3 };

struct Provenance {
  int sequence = 0;
  int frame = 0;  // index of the window's first frame in the source sequence
  bool reversed = false;
  FlipMode flip = FlipMode::none;
};

/// Three consecutive frames; i2 is the temporal midpoint target.
struct Triplet {
  Tensor i1, i2, i3;
  Provenance prov;
};

inline Tensor flip_rows(const Tensor& t) {
  Tensor out(t.n, t.c, t.h, t.w);
  for (int b = 0; b < t.n; ++b)
    for (int c = 0; c < t.c; ++c)
      for (int y = 0; y < t.h; ++y)
        for (int x = 0; x < t.w; ++x)
          out.at(b, c, y, x) = t.at(b, c, t.h - 1 - y, x);
  return out;
}

inline Tensor flip_cols(const Tensor& t) {
  Tensor out(t.n, t.c, t.h, t.w);
  for (int b = 0; b < t.n; ++b)
    for (int c = 0; c < t.c; ++c)
      for (int y = 0; y < t.h; ++y)
        for (int x = 0; x < t.w; ++x)
          out.at(b, c, y, x) = t.at(b, c, y, t.w - 1 - x);
  return out;
}

inline Tensor apply_flip(const Tensor& t, FlipMode mode) {
  switch (mode) {
    case FlipMode::none: return t;
    case FlipMode::vertical: return flip_rows(t);
    case FlipMode::horizontal: return flip_cols(t);
    case FlipMode::both: return flip_cols(flip_rows(t));
  }
  return t;
}

/// Builds training triplets from one temporally ordered frame sequence.
/// Every 3-frame window yields a forward and a reversed triplet; with
/// augmentation each of those is additionally flipped vertically,
/// horizontally and both ways, for 8 triplets per window. Windows never
/// straddle sequences.
inline std::vector<Triplet> make_triplets(const std::vector<Tensor>& frames,
                                          int sequence_id = 0, bool augment = true) {
  std::vector<Triplet> out;
  if (frames.size() < 3) {
    std::cerr << "make_triplets: sequence " << sequence_id << " has "
              << frames.size() << " frames, needs 3; skipping\n";
    return out;
  }
  for (std::size_t i = 1; i < frames.size(); ++i)
    require_same_shape(frames[i], frames[0], "make_triplets");

  const FlipMode flips[] = {FlipMode::none, FlipMode::vertical,
                            FlipMode::horizontal, FlipMode::both};
  for (std::size_t t = 0; t + 2 < frames.size(); ++t) {
    for (bool reversed : {false, true}) {
      const Tensor& a = reversed ? frames[t + 2] : frames[t];
      const Tensor& b = frames[t + 1];
      const Tensor& c = reversed ? frames[t] : frames[t + 2];
      const int n_flips = augment ? 4 : 1;
      for (int f = 0; f < n_flips; ++f) {
        Triplet tr;
        tr.i1 = apply_flip(a, flips[f]);
        tr.i2 = apply_flip(b, flips[f]);
        tr.i3 = apply_flip(c, flips[f]);
        tr.prov = {sequence_id, static_cast<int>(t), reversed, flips[f]};
        out.push_back(std::move(tr));
      }
    }
  }
  return out;
}

/// Splits window indices so the tail fraction of each sequence's windows is
/// held out; call before augmentation. Returns indices into `frames` windows.
inline std::pair<std::vector<int>, std::vector<int>> split_windows(int n_windows,
                                                                   double holdout) {
  std::vector<int> train, held;
  const int n_held = static_cast<int>(n_windows * holdout);
  for (int i = 0; i < n_windows; ++i)
    (i >= n_windows - n_held ? held : train).push_back(i);
  return {train, held};
}

// ---------------------------------------------------------------------------
// Loss

/// Charbonnier penalty rho(x) = sqrt(x^2 + eps^2), averaged over all
/// elements. Returns the loss and its gradient w.r.t. `pred`.
inline std::pair<double, Tensor> charbonnier_loss(const Tensor& pred,
                                                  const Tensor& target, double eps) {
  require_same_shape(pred, target, "charbonnier_loss");
  const double n = static_cast<double>(pred.size());
  Tensor grad(pred.n, pred.c, pred.h, pred.w);
  double loss = 0.0;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const double d = pred.data[i] - target.data[i];
    const double rho = std::sqrt(d * d + eps * eps);
    loss += rho;
    grad.data[i] = d / (n * rho);
  }
  return {loss / n, std::move(grad)};
}

// ---------------------------------------------------------------------------
// Adam

struct TrainConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int batch_size = 4;
  double charbonnier_eps = 0.1;
  int epochs = 20;
  std::uint64_t rng_seed = 0;
  double holdout_fraction = 0.1;

  void validate() const {
    if (lr <= 0 || adam_eps <= 0 || charbonnier_eps <= 0)
      throw ShapeError("TrainConfig: rates must be positive");
    if (beta1 <= 0 || beta1 >= 1 || beta2 <= 0 || beta2 >= 1)
      throw ShapeError("TrainConfig: betas must lie in (0,1)");
    if (batch_size < 1 || epochs < 1) throw ShapeError("TrainConfig: bad counts");
    if (holdout_fraction < 0 || holdout_fraction >= 1)
      throw ShapeError("TrainConfig: bad holdout fraction");
  }
};

/// First/second moment buffers mirroring every parameter array, plus the
/// step counter and the current (plateau-adjusted) learning rate.
struct OptimizerState {
  struct Moments {
    std::vector<double> m_w, v_w;
    std::vector<double> m_b, v_b;
    std::vector<double> m_s, v_s;
  };
  std::vector<Moments> layers;
  long t = 0;
  double lr = 0.0;

  static OptimizerState init(const std::vector<LayerParams>& params,
                             const TrainConfig& cfg) {
    OptimizerState st;
    st.lr = cfg.lr;
    st.layers.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      st.layers[i].m_w.assign(params[i].weights.size(), 0.0);
      st.layers[i].v_w.assign(params[i].weights.size(), 0.0);
      st.layers[i].m_b.assign(params[i].bias.size(), 0.0);
      st.layers[i].v_b.assign(params[i].bias.size(), 0.0);
      st.layers[i].m_s.assign(params[i].slope.size(), 0.0);
      st.layers[i].v_s.assign(params[i].slope.size(), 0.0);
    }
    return st;
  }
};

namespace detail {

inline void adam_update(std::vector<double>& theta, std::vector<double>& g,
                        std::vector<double>& m, std::vector<double>& v,
                        double lr, const TrainConfig& cfg, double bc1, double bc2) {
  for (std::size_t i = 0; i < theta.size(); ++i) {
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    theta[i] -= lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
    g[i] = 0.0;
  }
}

}  // namespace detail

/// One bias-corrected Adam step over every parameter array. Gradients are
/// zeroed afterwards.
inline void adam_step(std::vector<LayerParams>& params, OptimizerState& st,
                      const TrainConfig& cfg) {
  if (st.layers.size() != params.size())
    throw ShapeError("adam_step: optimizer state not initialised for these params");
  for (std::size_t i = 0; i < params.size(); ++i)
    if (st.layers[i].m_w.size() != params[i].weights.size() ||
        st.layers[i].m_b.size() != params[i].bias.size() ||
        st.layers[i].m_s.size() != params[i].slope.size())
      throw ShapeError("adam_step: optimizer state shape mismatch at layer " +
                       std::to_string(i));

  st.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.t));
  const double lr = st.lr;
  for (std::size_t i = 0; i < params.size(); ++i) {
    LayerParams& p = params[i];
    OptimizerState::Moments& mo = st.layers[i];
    if (!p.weights.empty()) {
      p.weights.ensure_grad();
      detail::adam_update(p.weights.data, p.weights.grad, mo.m_w, mo.v_w, lr, cfg,
                          bc1, bc2);
    }
    detail::adam_update(p.bias, p.bias_grad, mo.m_b, mo.v_b, lr, cfg, bc1, bc2);
    detail::adam_update(p.slope, p.slope_grad, mo.m_s, mo.v_s, lr, cfg, bc1, bc2);
  }
}

// ---------------------------------------------------------------------------
// Training loop

struct LossPoint {
  long step = 0;
  double loss = 0.0;
  double lr = 0.0;
};

struct TrainHooks {
  // Called after every epoch; the CLI uses it to write checkpoints.
  std::function<void(int epoch, const MindNet&, const OptimizerState&)> on_epoch;
};

struct TrainResult {
  std::vector<LossPoint> curve;
  bool diverged = false;
  long steps = 0;
};

/// Minibatch training: forward(i1,i3), Charbonnier against i2, full backward,
/// Adam. Shuffling is deterministic in cfg.rng_seed. The learning rate halves
/// when the 50-step moving average of the loss fails to improve by 0.1% over
/// 200 steps. A non-finite loss aborts the run with `diverged` set; the last
/// epoch checkpoint written by the hook stays on disk.
inline TrainResult train(MindNet& net, const std::vector<Triplet>& triplets,
                         const TrainConfig& cfg, const TrainHooks& hooks = {}) {
  cfg.validate();
  if (triplets.empty()) throw ShapeError("train: no triplets");

  OptimizerState st = OptimizerState::init(net.params(), cfg);
  Rng rng(cfg.rng_seed);
  TrainResult res;

  constexpr int kMaWindow = 50;
  constexpr int kPlateauSteps = 200;
  constexpr double kPlateauRel = 1e-3;
  std::vector<double> recent;
  double best_ma = 1e300;
  long best_ma_step = 0;

  std::vector<std::size_t> order(triplets.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle(order, rng);
    for (std::size_t pos = 0; pos < order.size(); pos += cfg.batch_size) {
      const std::size_t take =
          std::min<std::size_t>(cfg.batch_size, order.size() - pos);
      std::vector<const Tensor*> b1, b2, b3;
      for (std::size_t k = 0; k < take; ++k) {
        const Triplet& t = triplets[order[pos + k]];
        b1.push_back(&t.i1);
        b2.push_back(&t.i2);
        b3.push_back(&t.i3);
      }
      Tensor i1 = stack_batch(b1);
      Tensor i2 = stack_batch(b2);
      Tensor i3 = stack_batch(b3);

      Tensor pred = net.forward(i1, i3);
      auto [loss, grad] = charbonnier_loss(pred, i2, cfg.charbonnier_eps);
      if (!std::isfinite(loss)) {
        res.diverged = true;
        res.steps = step;
        return res;
      }

      net.zero_grads();
      net.backward_params(grad);
      adam_step(net.params(), st, cfg);
      net.invalidate_cache();

      ++step;
      res.curve.push_back({step, loss, st.lr});

      // plateau rule on the moving average
      recent.push_back(loss);
      if (static_cast<int>(recent.size()) > kMaWindow)
        recent.erase(recent.begin());
      if (static_cast<int>(recent.size()) == kMaWindow) {
        double ma = 0.0;
        for (double v : recent) ma += v;
        ma /= kMaWindow;
        if (ma < best_ma * (1.0 - kPlateauRel)) {
          best_ma = ma;
          best_ma_step = step;
        } else if (step - best_ma_step >= kPlateauSteps) {
          st.lr *= 0.5;
          best_ma_step = step;
        }
      }
    }
    if (hooks.on_epoch) hooks.on_epoch(epoch, net, st);
  }
  res.steps = step;
  return res;
}

}  // namespace mind
