#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "mind/flow_io.hpp"
#include "mind/rng.hpp"
#include "mind/tensor.hpp"

namespace mind {

// Synthetic temporally coherent scenes: textured sprites translating at
// constant velocity over a static textured background, so the middle frame
// is the exact motion midpoint and the frame-1 -> frame-3 flow is known
// analytically.

struct SpriteConfig {
  std::uint64_t texture_seed = 0;
  int size = 8;          // square, in pixels
  double x = 0, y = 0;   // top-left corner in frame 1 (column, row)
  double vx = 0, vy = 0; // pixels per frame
};

struct SceneConfig {
  int h = 32, w = 64;
  std::vector<SpriteConfig> sprites;  // later entries render on top
  std::uint64_t background_seed = 0;
  std::uint64_t rng_seed = 0;
  double max_speed = 3.0;
  int background_cell = 8;  // texture lattice spacing, px
  int sprite_cell = 3;
  double tex_lo = 0.05, tex_hi = 0.95;  // texture intensity range

  void validate() const {
    if (h < 1 || w < 1) throw ShapeError("SceneConfig: bad canvas");
    for (const SpriteConfig& s : sprites) {
      if (s.size < 1) throw ShapeError("SceneConfig: bad sprite size");
      if (std::abs(s.vx) > max_speed || std::abs(s.vy) > max_speed)
        throw ShapeError("SceneConfig: sprite velocity exceeds " +
                         std::to_string(max_speed) + " px/frame");
      for (int f = 0; f < 3; ++f) {
        const double px = s.x + f * s.vx, py = s.y + f * s.vy;
        if (px < 0 || py < 0 || px + s.size > w || py + s.size > h)
          throw ShapeError("SceneConfig: sprite leaves canvas at frame " +
                           std::to_string(f + 1));
      }
    }
  }
};

namespace detail {

/// Value noise: a coarse random lattice interpolated bilinearly. Gives
/// smooth but locally distinctive texture.
inline Tensor make_texture(std::uint64_t seed, int h, int w, int cell,
                           double lo, double hi) {
  Rng rng(seed);
  const int gh = h / cell + 2, gw = w / cell + 2;
  std::vector<double> lattice(static_cast<std::size_t>(gh) * gw * 3);
  for (double& v : lattice) v = uniform(rng, lo, hi);
  auto lat = [&](int c, int gy, int gx) {
    return lattice[(static_cast<std::size_t>(c) * gh + gy) * gw + gx];
  };
  Tensor t(1, 3, h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double fy = static_cast<double>(y) / cell;
      const double fx = static_cast<double>(x) / cell;
      const int gy = static_cast<int>(fy), gx = static_cast<int>(fx);
      const double ay = fy - gy, ax = fx - gx;
      for (int c = 0; c < 3; ++c) {
        const double top = lat(c, gy, gx) * (1 - ax) + lat(c, gy, gx + 1) * ax;
        const double bot = lat(c, gy + 1, gx) * (1 - ax) + lat(c, gy + 1, gx + 1) * ax;
        t.at(0, c, y, x) = top * (1 - ay) + bot * ay;
      }
    }
  return t;
}

/// Bilinear sample with clamped coordinates.
inline double sample_bilinear(const Tensor& t, int c, double y, double x) {
  y = std::min(std::max(y, 0.0), static_cast<double>(t.h - 1));
  x = std::min(std::max(x, 0.0), static_cast<double>(t.w - 1));
  const int y0 = static_cast<int>(y), x0 = static_cast<int>(x);
  const int y1 = std::min(y0 + 1, t.h - 1), x1 = std::min(x0 + 1, t.w - 1);
  const double ay = y - y0, ax = x - x0;
  return t.at(0, c, y0, x0) * (1 - ay) * (1 - ax) +
         t.at(0, c, y0, x1) * (1 - ay) * ax +
         t.at(0, c, y1, x0) * ay * (1 - ax) + t.at(0, c, y1, x1) * ay * ax;
}

inline bool sprite_covers(const SpriteConfig& s, int frame, double py, double px) {
  const double sx = s.x + frame * s.vx, sy = s.y + frame * s.vy;
  return px >= sx && px < sx + s.size && py >= sy && py < sy + s.size;
}

/// Topmost sprite covering a point, or -1 for background.
inline int owner_at(const SceneConfig& cfg, int frame, double py, double px) {
  for (int i = static_cast<int>(cfg.sprites.size()) - 1; i >= 0; --i)
    if (sprite_covers(cfg.sprites[i], frame, py, px)) return i;
  return -1;
}

}  // namespace detail

struct Sequence {
  std::array<Tensor, 3> frames;
  FlowField gt_flow;  // frame 1 -> frame 3
};

/// Renders the three frames and the analytic ground-truth flow. Pixels whose
/// destination is covered by a different surface in frame 3 (or background
/// pixels that a sprite moves onto) are marked invalid.
inline Sequence generate_sequence(const SceneConfig& cfg) {
  cfg.validate();
  Sequence seq;
  const Tensor background = detail::make_texture(cfg.background_seed, cfg.h, cfg.w,
                                                 cfg.background_cell, cfg.tex_lo,
                                                 cfg.tex_hi);
  std::vector<Tensor> sprite_tex;
  for (const SpriteConfig& s : cfg.sprites)
    sprite_tex.push_back(detail::make_texture(s.texture_seed, s.size, s.size,
                                              cfg.sprite_cell, cfg.tex_lo,
                                              cfg.tex_hi));

  for (int f = 0; f < 3; ++f) {
    Tensor frame = background;
    for (std::size_t i = 0; i < cfg.sprites.size(); ++i) {
      const SpriteConfig& s = cfg.sprites[i];
      const double sx = s.x + f * s.vx, sy = s.y + f * s.vy;
      const int y_lo = std::max(0, static_cast<int>(std::ceil(sy)));
      const int x_lo = std::max(0, static_cast<int>(std::ceil(sx)));
      for (int y = y_lo; y < cfg.h && y < sy + s.size; ++y)
        for (int x = x_lo; x < cfg.w && x < sx + s.size; ++x)
          for (int c = 0; c < 3; ++c)
            frame.at(0, c, y, x) =
                detail::sample_bilinear(sprite_tex[i], c, y - sy, x - sx);
    }
    seq.frames[f] = std::move(frame);
  }

  seq.gt_flow = FlowField(cfg.h, cfg.w);
  for (int y = 0; y < cfg.h; ++y)
    for (int x = 0; x < cfg.w; ++x) {
      const std::size_t i = seq.gt_flow.index(y, x);
      const int owner = detail::owner_at(cfg, 0, y, x);
      if (owner < 0) {
        seq.gt_flow.u[i] = 0.0;
        seq.gt_flow.v[i] = 0.0;
        seq.gt_flow.valid[i] = detail::owner_at(cfg, 2, y, x) < 0;
      } else {
        const SpriteConfig& s = cfg.sprites[owner];
        seq.gt_flow.u[i] = 2.0 * s.vx;
        seq.gt_flow.v[i] = 2.0 * s.vy;
        seq.gt_flow.valid[i] =
            detail::owner_at(cfg, 2, y + 2.0 * s.vy, x + 2.0 * s.vx) == owner;
      }
    }
  return seq;
}

/// Knobs for drawing random scenes.
struct SceneSamplerConfig {
  int canvas_h = 32, canvas_w = 64;
  int sprites_min = 2, sprites_max = 3;
  int sprite_size_min = 9, sprite_size_max = 15;
  double max_speed = 3.0;
  int background_cell = 8;
  int sprite_cell = 3;
  double tex_lo = 0.05, tex_hi = 0.95;
  std::uint64_t rng_seed = 0;
};

inline SceneConfig sample_scene(Rng& rng, const SceneSamplerConfig& sc) {
  SceneConfig cfg;
  cfg.h = sc.canvas_h;
  cfg.w = sc.canvas_w;
  cfg.max_speed = sc.max_speed;
  cfg.background_cell = sc.background_cell;
  cfg.sprite_cell = sc.sprite_cell;
  cfg.tex_lo = sc.tex_lo;
  cfg.tex_hi = sc.tex_hi;
  cfg.background_seed = rng();
  cfg.rng_seed = rng();
  const int n_sprites =
      sc.sprites_min + static_cast<int>(uniform_index(
                           rng, static_cast<std::uint64_t>(
                                    sc.sprites_max - sc.sprites_min + 1)));
  for (int i = 0; i < n_sprites; ++i) {
    SpriteConfig s;
    s.texture_seed = rng();
    s.size = sc.sprite_size_min +
             static_cast<int>(uniform_index(
                 rng, static_cast<std::uint64_t>(sc.sprite_size_max -
                                                 sc.sprite_size_min + 1)));
    for (int attempt = 0;; ++attempt) {
      if (attempt > 1000)
        throw ShapeError("sample_scene: canvas too small for sprite");
      s.vx = uniform(rng, -sc.max_speed, sc.max_speed);
      s.vy = uniform(rng, -sc.max_speed, sc.max_speed);
      const double x_lo = std::max(0.0, -2.0 * s.vx);
      const double x_hi = cfg.w - s.size - std::max(0.0, 2.0 * s.vx);
      const double y_lo = std::max(0.0, -2.0 * s.vy);
      const double y_hi = cfg.h - s.size - std::max(0.0, 2.0 * s.vy);
      if (x_hi <= x_lo || y_hi <= y_lo) continue;
      s.x = uniform(rng, x_lo, x_hi);
      s.y = uniform(rng, y_lo, y_hi);
      break;
    }
    cfg.sprites.push_back(s);
  }
  cfg.validate();
  return cfg;
}

}  // namespace mind
