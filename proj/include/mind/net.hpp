#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "mind/layers.hpp"
#include "mind/rng.hpp"

namespace mind {

/// Architecture description. The encoder is a chain of conv blocks
/// ([conv -> prelu] * convs_per_block -> pool), the decoder mirrors it with
/// deconv blocks (convT -> prelu -> [conv -> prelu] * (convs_per_block-1)),
/// and a final 3x3 conv produces the RGB output. The output of conv block k
/// (k in 2..levels-1) is concatenated onto the input of deconv block k, the
/// matching resolution; both streams there sit at 1/2^k scale.
struct NetConfig {
  int input_h = 0;
  int input_w = 0;
  std::vector<int> conv_channels;   // encoder blocks, block 1 first
  std::vector<int> dconv_channels;  // decoder blocks, deepest block first
  int convs_per_block = 3;

  int levels() const { return static_cast<int>(conv_channels.size()); }

  bool has_skip(int block) const { return block >= 2 && block <= levels() - 1; }

  /// (channels, h, w) of encoder block k's output; spatial dims halve per
  /// block.
  std::array<int, 3> conv_block_output(int k) const {
    return {conv_channels[k - 1], input_h >> k, input_w >> k};
  }

  /// (channels, h, w) of decoder block k's output; spatial dims double back.
  std::array<int, 3> dconv_block_output(int k) const {
    return {dconv_channels[levels() - k], input_h >> (k - 1), input_w >> (k - 1)};
  }

  void validate() const {
    if (input_h <= 0 || input_w <= 0) throw ShapeError("NetConfig: bad input dims");
    if (conv_channels.size() != dconv_channels.size())
      throw ShapeError("NetConfig: conv/dconv block counts differ");
    if (conv_channels.size() > 8) throw ShapeError("NetConfig: too many blocks");
    if (convs_per_block < 1) throw ShapeError("NetConfig: convs_per_block < 1");
    const int div = 1 << levels();
    if (input_h % div != 0 || input_w % div != 0)
      throw ShapeError("NetConfig: input " + std::to_string(input_h) + "x" +
                       std::to_string(input_w) + " not divisible by 2^" +
                       std::to_string(levels()));
    for (int c : conv_channels)
      if (c < 1) throw ShapeError("NetConfig: non-positive channel count");
    for (int c : dconv_channels)
      if (c < 1) throw ShapeError("NetConfig: non-positive channel count");
  }

  /// Channel widths used for full-resolution training (384x128 frames).
  static NetConfig full_scale(int input_h = 128, int input_w = 384) {
    NetConfig c;
    c.input_h = input_h;
    c.input_w = input_w;
    c.conv_channels = {96, 96, 128, 128, 128};
    c.dconv_channels = {128, 128, 128, 96, 96};
    c.convs_per_block = 3;
    return c;
  }

  /// Small configuration that trains in minutes on one CPU core.
  static NetConfig desk_scale(int input_h = 32, int input_w = 64) {
    NetConfig c;
    c.input_h = input_h;
    c.input_w = input_w;
    c.conv_channels = {8, 8, 16, 16, 16};
    c.dconv_channels = {16, 16, 16, 8, 8};
    c.convs_per_block = 2;
    return c;
  }
};

/// One output pixel to back-propagate from. channel < 0 seeds all three RGB
/// channels with `value` (gradient of the channel sum); otherwise only the
/// given channel is seeded.
struct PixelSeed {
  int i = 0, j = 0;
  int channel = -1;
  double value = 1.0;
};

/// Frame-interpolation network: predicts the middle frame from a bracketing
/// pair, and exposes the reverse mapping from an output pixel back to both
/// input images.
class MindNet {
 public:
  struct Counters {
    long forward_passes = 0;
    long backward_seeds = 0;
  };

  static MindNet build(const NetConfig& config, std::uint64_t rng_seed) {
    config.validate();
    MindNet net;
    net.config_ = config;
    net.build_plan();
    Rng rng(rng_seed);
    for (LayerParams& p : net.params_) {
      if (p.kind == LayerKind::prelu) continue;
      const int k = p.kernel();
      const double fan_in = static_cast<double>(p.in_channels()) * k * k;
      const double fan_out = static_cast<double>(p.out_channels()) * k * k;
      const double bound = std::sqrt(6.0 / (fan_in + fan_out));
      for (double& v : p.weights.data) v = uniform(rng, -bound, bound);
    }
    return net;
  }

  const NetConfig& config() const { return config_; }
  std::vector<LayerParams>& params() { return params_; }
  const std::vector<LayerParams>& params() const { return params_; }

  int input_height() const { return config_.input_h; }
  int input_width() const { return config_.input_w; }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.param_count();
    return n;
  }

  void zero_grads() {
    for (auto& p : params_) p.zero_grads();
  }

  /// Any parameter update makes the cached activations unusable.
  void invalidate_cache() { cache_valid_ = false; }
  bool cache_valid() const { return cache_valid_; }

  const Counters& counters() const { return counters_; }
  void reset_counters() { counters_ = {}; }

  /// Runs the network on a bracketing frame pair. Both inputs must be
  /// (n, 3, input_h, input_w); they are stacked into a 6-channel blob with
  /// i1's channels first. Activations are cached for the backward passes.
  Tensor forward(const Tensor& i1, const Tensor& i3) {
    check_input(i1);
    check_input(i3);
    if (i1.n != i3.n)
      throw ShapeError("forward: batch mismatch " + i1.shape_str() + " vs " +
                       i3.shape_str());
    cached_i1_ = i1;
    cached_i3_ = i3;

    Tensor x(i1.n, 6, i1.h, i1.w);
    const std::size_t plane3 = static_cast<std::size_t>(3) * i1.h * i1.w;
    for (int b = 0; b < i1.n; ++b) {
      std::copy_n(i1.data.begin() + b * plane3, plane3,
                  x.data.begin() + static_cast<std::size_t>(b) * 2 * plane3);
      std::copy_n(i3.data.begin() + b * plane3, plane3,
                  x.data.begin() + static_cast<std::size_t>(b) * 2 * plane3 + plane3);
    }

    inputs_.clear();
    inputs_.reserve(plan_.size());
    pools_.clear();
    skips_.assign(skip_slots_, Tensor());
    for (const Step& st : plan_) {
      inputs_.push_back(x);
      switch (st.kind) {
        case StepKind::conv:
          x = conv2d(x, params_[st.param], st.stride, st.pad);
          break;
        case StepKind::conv_transpose:
          x = conv_transpose2d(x, params_[st.param], st.stride, st.pad);
          break;
        case StepKind::prelu:
          x = prelu(x, params_[st.param]);
          break;
        case StepKind::pool: {
          auto [out, idx] = maxpool2x2(x);
          pools_.push_back(std::move(idx));
          x = std::move(out);
          break;
        }
        case StepKind::save_skip:
          skips_[st.slot] = x;
          break;
        case StepKind::concat_skip:
          x = concat_channels(x, skips_[st.slot]);
          break;
      }
    }
    output_ = x;
    cache_valid_ = true;
    ++counters_.forward_passes;
    return output_;
  }

  /// Re-runs forward only if the cache does not already hold this pair.
  void ensure_forward(const Tensor& i1, const Tensor& i3) {
    if (cache_valid_ && cached_i1_.same_shape(i1) && cached_i3_.same_shape(i3) &&
        cached_i1_.data == i1.data && cached_i3_.data == i3.data)
      return;
    forward(i1, i3);
  }

  const Tensor& output() const {
    require_cache();
    return output_;
  }

  /// Training backward: accumulates parameter gradients from a loss gradient
  /// over the output, and returns the gradient w.r.t. the stacked 6-channel
  /// input.
  Tensor backward_params(const Tensor& grad_out) {
    require_cache();
    require_same_shape(grad_out, output_, "backward_params");
    Tensor g = grad_out;
    std::vector<Tensor> skip_g(skip_slots_);
    int pool_i = static_cast<int>(pools_.size()) - 1;
    for (int i = static_cast<int>(plan_.size()) - 1; i >= 0; --i) {
      const Step& st = plan_[i];
      switch (st.kind) {
        case StepKind::conv:
          g = conv2d_backward(inputs_[i], params_[st.param], g, st.stride, st.pad);
          break;
        case StepKind::conv_transpose:
          g = conv_transpose2d_backward(inputs_[i], params_[st.param], g,
                                        st.stride, st.pad);
          break;
        case StepKind::prelu:
          g = prelu_backward(inputs_[i], params_[st.param], g);
          break;
        case StepKind::pool:
          g = maxpool2x2_backward(pools_[pool_i--], g);
          break;
        case StepKind::concat_skip: {
          auto [gm, gs] = split_channels(g, inputs_[i].c);
          g = std::move(gm);
          skip_g[st.slot] = std::move(gs);
          break;
        }
        case StepKind::save_skip:
          if (!skip_g[st.slot].empty())
            for (std::size_t k = 0; k < g.data.size(); ++k)
              g.data[k] += skip_g[st.slot].data[k];
          break;
      }
    }
    return g;
  }

  /// Back-propagates one output-pixel seed down to the two input images.
  /// Parameter gradients are not touched. Requires a cached single-sample
  /// forward pass.
  std::pair<Tensor, Tensor> backward_to_input(const PixelSeed& seed) const {
    return backward_to_input_batch(std::span<const PixelSeed>(&seed, 1));
  }

  /// Same, for a batch of seeds in one sweep over the cache. Results are
  /// returned as (k, 3, h, w) tensors, one batch row per seed, and are
  /// bit-identical to the one-seed path.
  std::pair<Tensor, Tensor> backward_to_input_batch(
      std::span<const PixelSeed> seeds) const {
    require_cache();
    if (output_.n != 1)
      throw ShapeError("backward_to_input: requires a single-sample forward");
    for (const PixelSeed& s : seeds) {
      if (s.i < 0 || s.i >= output_.h || s.j < 0 || s.j >= output_.w)
        throw ShapeError("backward_to_input: seed (" + std::to_string(s.i) + "," +
                         std::to_string(s.j) + ") outside " + output_.shape_str());
      if (s.channel >= output_.c)
        throw ShapeError("backward_to_input: bad seed channel");
    }

    const int n = static_cast<int>(seeds.size());
    Tensor g1(n, 3, output_.h, output_.w);
    Tensor g3(n, 3, output_.h, output_.w);
    int pos = 0;
    while (pos < n) {
      const int left = n - pos;
      if (left >= 16)
        pos += invert_chunk<16>(seeds.subspan(pos, 16), g1, g3, pos);
      else if (left >= 8)
        pos += invert_chunk<8>(seeds.subspan(pos, 8), g1, g3, pos);
      else if (left >= 4)
        pos += invert_chunk<4>(seeds.subspan(pos, 4), g1, g3, pos);
      else if (left >= 2)
        pos += invert_chunk<2>(seeds.subspan(pos, 2), g1, g3, pos);
      else
        pos += invert_chunk<1>(seeds.subspan(pos, 1), g1, g3, pos);
    }
    counters_.backward_seeds += n;
    return {std::move(g1), std::move(g3)};
  }

  /// Rough per-seed workspace size of one inversion sweep, for sizing
  /// batches against a memory budget.
  std::size_t inversion_workspace_bytes_per_seed() const {
    require_cache();
    std::size_t max_elems = output_.size(), skip_elems = 0;
    for (std::size_t i = 0; i < plan_.size(); ++i) {
      max_elems = std::max(max_elems, inputs_[i].size());
      if (plan_[i].kind == StepKind::save_skip) skip_elems += inputs_[i].size();
    }
    return (2 * max_elems + skip_elems) * sizeof(double);
  }

  // Diagnostics over the cached activations, used by gradient checks to
  // confirm finite-difference probes sit away from PReLU kinks and pooling
  // ties.
  double min_prelu_margin() const {
    require_cache();
    double m = 1e300;
    for (std::size_t i = 0; i < plan_.size(); ++i)
      if (plan_[i].kind == StepKind::prelu)
        for (double v : inputs_[i].data) m = std::min(m, std::abs(v));
    return m;
  }

  double min_pool_gap() const {
    require_cache();
    double m = 1e300;
    for (std::size_t i = 0; i < plan_.size(); ++i) {
      if (plan_[i].kind != StepKind::pool) continue;
      const Tensor& x = inputs_[i];
      for (int b = 0; b < x.n; ++b)
        for (int ch = 0; ch < x.c; ++ch)
          for (int oy = 0; oy < x.h / 2; ++oy)
            for (int ox = 0; ox < x.w / 2; ++ox) {
              double top = -1e300, second = -1e300;
              for (int k = 0; k < 4; ++k) {
                const double v = x.at(b, ch, 2 * oy + k / 2, 2 * ox + k % 2);
                if (v > top) {
                  second = top;
                  top = v;
                } else if (v > second) {
                  second = v;
                }
              }
              m = std::min(m, top - second);
            }
    }
    return m;
  }

  // Layer inventory, used by the checkpoint format.
  enum class StepKind : std::uint8_t {
    conv,
    conv_transpose,
    prelu,
    pool,
    save_skip,
    concat_skip
  };
  struct Step {
    StepKind kind;
    int param = -1;
    int slot = -1;
    int stride = 1, pad = 1;
  };
  const std::vector<Step>& plan() const { return plan_; }

  /// Cached input of every plan step from the last forward pass.
  const std::vector<Tensor>& step_inputs() const {
    require_cache();
    return inputs_;
  }

 private:
  void check_input(const Tensor& t) const {
    if (t.c != 3 || t.h != config_.input_h || t.w != config_.input_w)
      throw ShapeError("forward: input " + t.shape_str() + " does not match config (" +
                       std::to_string(config_.input_h) + "x" +
                       std::to_string(config_.input_w) + ")");
  }

  void require_cache() const {
    if (!cache_valid_)
      throw NumericError("stale forward cache: run forward() after any parameter change");
  }

  void add_conv(int& ch, int out_c, int k, int stride, int pad, LayerKind kind) {
    params_.push_back(LayerParams::make_conv(out_c, ch, k, kind));
    plan_.push_back({kind == LayerKind::conv ? StepKind::conv : StepKind::conv_transpose,
                     static_cast<int>(params_.size()) - 1, -1, stride, pad});
    ch = out_c;
  }

  void add_prelu(int ch) {
    params_.push_back(LayerParams::make_prelu(ch));
    plan_.push_back({StepKind::prelu, static_cast<int>(params_.size()) - 1, -1, 1, 0});
  }

  void build_plan() {
    const int levels = config_.levels();
    const int m = config_.convs_per_block;
    std::vector<int> slot_of_block(levels + 1, -1);
    skip_slots_ = 0;
    int ch = 6;
    for (int k = 1; k <= levels; ++k) {
      for (int j = 0; j < m; ++j) {
        add_conv(ch, config_.conv_channels[k - 1], 3, 1, 1, LayerKind::conv);
        add_prelu(ch);
      }
      plan_.push_back({StepKind::pool, -1, -1, 2, 0});
      if (config_.has_skip(k)) {
        slot_of_block[k] = skip_slots_++;
        plan_.push_back({StepKind::save_skip, -1, slot_of_block[k], 1, 0});
      }
    }
    for (int k = levels; k >= 1; --k) {
      if (config_.has_skip(k)) {
        plan_.push_back({StepKind::concat_skip, -1, slot_of_block[k], 1, 0});
        ch += config_.conv_channels[k - 1];
      }
      add_conv(ch, config_.dconv_channels[levels - k], 4, 2, 1,
               LayerKind::conv_transpose);
      add_prelu(ch);
      for (int j = 1; j < m; ++j) {
        add_conv(ch, ch, 3, 1, 1, LayerKind::conv);
        add_prelu(ch);
      }
    }
    add_conv(ch, 3, 3, 1, 1, LayerKind::conv);  // output stage, no activation
  }

  template <int K>
  int invert_chunk(std::span<const PixelSeed> seeds, Tensor& out1, Tensor& out3,
                   int row) const {
    using detail::SeedGrad;
    SeedGrad g(output_.c, output_.h, output_.w, K);
    for (int s = 0; s < K; ++s) {
      const PixelSeed& ps = seeds[s];
      if (ps.channel < 0) {
        for (int c = 0; c < output_.c; ++c)
          g.data[g.index(c, ps.i, ps.j) + s] = ps.value;
      } else {
        g.data[g.index(ps.channel, ps.i, ps.j) + s] = ps.value;
      }
    }

    std::vector<SeedGrad> skip_g(skip_slots_);
    int pool_i = static_cast<int>(pools_.size()) - 1;
    for (int i = static_cast<int>(plan_.size()) - 1; i >= 0; --i) {
      const Step& st = plan_[i];
      const Tensor& x = inputs_[i];
      switch (st.kind) {
        case StepKind::conv: {
          SeedGrad gi(x.c, x.h, x.w, K);
          detail::conv_bwd_input_k<K>(params_[st.param].weights, g, st.stride,
                                      st.pad, gi);
          g = std::move(gi);
          break;
        }
        case StepKind::conv_transpose: {
          SeedGrad gi(x.c, x.h, x.w, K);
          detail::convt_bwd_input_k<K>(params_[st.param].weights, g, st.stride,
                                       st.pad, gi);
          g = std::move(gi);
          break;
        }
        case StepKind::prelu: {
          SeedGrad gi(x.c, x.h, x.w, K);
          detail::prelu_bwd_input_k<K>(x, params_[st.param].slope, g, gi);
          g = std::move(gi);
          break;
        }
        case StepKind::pool: {
          SeedGrad gi(x.c, x.h, x.w, K);
          detail::pool_bwd_k<K>(pools_[pool_i--], g, gi);
          g = std::move(gi);
          break;
        }
        case StepKind::concat_skip: {
          auto [gm, gs] = detail::split_seed_grad(g, x.c);
          g = std::move(gm);
          skip_g[st.slot] = std::move(gs);
          break;
        }
        case StepKind::save_skip:
          if (!skip_g[st.slot].data.empty())
            for (std::size_t k = 0; k < g.data.size(); ++k)
              g.data[k] += skip_g[st.slot].data[k];
          break;
      }
    }

    // g is now (6, h, w, K); peel it apart into per-seed RGB gradients.
    const int h = config_.input_h, w = config_.input_w;
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const double* a = &g.data[g.index(c, y, x)];
          const double* b = &g.data[g.index(c + 3, y, x)];
          for (int s = 0; s < K; ++s) {
            out1.at(row + s, c, y, x) = a[s];
            out3.at(row + s, c, y, x) = b[s];
          }
        }
    return K;
  }

  NetConfig config_;
  std::vector<LayerParams> params_;
  std::vector<Step> plan_;
  int skip_slots_ = 0;

  // forward cache
  bool cache_valid_ = false;
  Tensor cached_i1_, cached_i3_;
  std::vector<Tensor> inputs_;
  std::vector<PoolIndex> pools_;
  std::vector<Tensor> skips_;
  Tensor output_;

  mutable Counters counters_;
};

}  // namespace mind
