#pragma once

#include <cstdio>
#include <fstream>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "mind/net.hpp"

namespace mind {

/// Absolute input-gradient maps of one output pixel, one map per input image.
struct SensitivityPair {
  int anchor_i = 0, anchor_j = 0;
  Tensor g1, g3;  // (1, 1, h, w), elementwise >= 0
};

struct Correspondence {
  int anchor_i = 0, anchor_j = 0;
  int p1_r = 0, p1_c = 0;
  int p3_r = 0, p3_c = 0;
  double score1 = 0.0, score3 = 0.0;
  bool valid = true;

  /// Ranking key when one score is needed: the weaker of the two.
  double score() const { return std::min(score1, score3); }
};

struct MatchSet {
  std::vector<Correspondence> matches;
  int grid_stride = 0;
  int h = 0, w = 0;
};

/// |sum over channels| of one batch row, as a single-channel map.
inline Tensor abs_channel_sum(const Tensor& g, int row) {
  Tensor out(1, 1, g.h, g.w);
  for (int y = 0; y < g.h; ++y)
    for (int x = 0; x < g.w; ++x) {
      double s = 0.0;
      for (int c = 0; c < g.c; ++c) s += g.at(row, c, y, x);
      out.at(0, 0, y, x) = std::abs(s);
    }
  return out;
}

/// Peak-to-local-mean ratio: map value at p divided by the mean over the
/// 20x20 window around p, clipped at the image border. An all-zero window
/// scores 0.
inline double matching_score(const Tensor& g, int r, int c) {
  const int r0 = std::max(0, r - 10), r1 = std::min(g.h - 1, r + 9);
  const int c0 = std::max(0, c - 10), c1 = std::min(g.w - 1, c + 9);
  double sum = 0.0;
  for (int y = r0; y <= r1; ++y)
    for (int x = c0; x <= c1; ++x) sum += g.at(0, 0, y, x);
  const double mean = sum / (static_cast<double>(r1 - r0 + 1) * (c1 - c0 + 1));
  if (mean <= 0.0) return 0.0;
  return g.at(0, 0, r, c) / mean;
}

namespace detail {

/// First maximum in row-major order (ties resolve to the smallest index).
inline std::pair<int, int> argmax_map(const Tensor& g, bool& any_positive) {
  int br = 0, bc = 0;
  double best = -1.0;
  any_positive = false;
  for (int y = 0; y < g.h; ++y)
    for (int x = 0; x < g.w; ++x) {
      const double v = g.at(0, 0, y, x);
      if (v > best) {
        best = v;
        br = y;
        bc = x;
      }
      if (v > 0.0) any_positive = true;
    }
  return {br, bc};
}

}  // namespace detail

/// Turns one sensitivity pair into a correspondence by taking the argmax of
/// each map. All-zero maps yield an invalid correspondence with score 0.
inline Correspondence extract_match(const SensitivityPair& sp) {
  Correspondence m;
  m.anchor_i = sp.anchor_i;
  m.anchor_j = sp.anchor_j;
  bool pos1 = false, pos3 = false;
  std::tie(m.p1_r, m.p1_c) = detail::argmax_map(sp.g1, pos1);
  std::tie(m.p3_r, m.p3_c) = detail::argmax_map(sp.g3, pos3);
  if (!pos1 || !pos3) {
    m.valid = false;
    m.score1 = m.score3 = 0.0;
    return m;
  }
  m.score1 = matching_score(sp.g1, m.p1_r, m.p1_c);
  m.score3 = matching_score(sp.g3, m.p3_r, m.p3_c);
  return m;
}

struct BatchOptions {
  int max_seeds_per_sweep = 16;
  std::size_t memory_budget_bytes = 512ull << 20;
};

/// Sensitivity maps for one anchor: exactly one backward pass over the
/// cached forward activations.
template <typename Net>
SensitivityPair sensitivity(Net& net, const Tensor& i1, const Tensor& i3,
                            std::pair<int, int> anchor) {
  net.ensure_forward(i1, i3);
  PixelSeed seed{anchor.first, anchor.second};
  auto [gi1, gi3] = net.backward_to_input(seed);
  SensitivityPair sp;
  sp.anchor_i = anchor.first;
  sp.anchor_j = anchor.second;
  sp.g1 = abs_channel_sum(gi1, 0);
  sp.g3 = abs_channel_sum(gi3, 0);
  return sp;
}

/// Batched variant: processes up to `max_seeds_per_sweep` anchors per
/// backward sweep against the shared forward cache, shrinking the sweep if
/// the per-seed workspace would exceed the memory budget. Results equal the
/// serial path.
template <typename Net>
std::vector<SensitivityPair> sensitivity_batch(Net& net, const Tensor& i1,
                                               const Tensor& i3,
                                               std::span<const std::pair<int, int>> anchors,
                                               const BatchOptions& opts = {}) {
  {
    std::set<std::pair<int, int>> uniq(anchors.begin(), anchors.end());
    if (uniq.size() != anchors.size())
      throw ShapeError("sensitivity_batch: duplicate anchors");
  }
  net.ensure_forward(i1, i3);

  int k = std::max(1, opts.max_seeds_per_sweep);
  const std::size_t per_seed = net.inversion_workspace_bytes_per_seed();
  while (k > 1 && per_seed * static_cast<std::size_t>(k) > opts.memory_budget_bytes)
    k /= 2;

  std::vector<SensitivityPair> out;
  out.reserve(anchors.size());
  std::vector<PixelSeed> seeds;
  for (std::size_t pos = 0; pos < anchors.size(); pos += k) {
    const std::size_t take = std::min<std::size_t>(k, anchors.size() - pos);
    seeds.clear();
    for (std::size_t s = 0; s < take; ++s)
      seeds.push_back({anchors[pos + s].first, anchors[pos + s].second});
    auto [g1, g3] = net.backward_to_input_batch(
        std::span<const PixelSeed>(seeds.data(), seeds.size()));
    for (std::size_t s = 0; s < take; ++s) {
      SensitivityPair sp;
      sp.anchor_i = seeds[s].i;
      sp.anchor_j = seeds[s].j;
      sp.g1 = abs_channel_sum(g1, static_cast<int>(s));
      sp.g3 = abs_channel_sum(g3, static_cast<int>(s));
      out.push_back(std::move(sp));
    }
  }
  return out;
}

/// Semi-dense matching: one forward pass, then one correspondence per anchor
/// of a stride-spaced grid anchored at (0,0).
template <typename Net>
MatchSet match_grid(Net& net, const Tensor& i1, const Tensor& i3, int stride,
                    const BatchOptions& opts = {}) {
  if (stride < 1) throw ShapeError("match_grid: stride must be >= 1");
  net.ensure_forward(i1, i3);
  const int h = i1.h, w = i1.w;

  std::vector<std::pair<int, int>> anchors;
  for (int r = 0; r < h; r += stride)
    for (int c = 0; c < w; c += stride) anchors.emplace_back(r, c);

  MatchSet ms;
  ms.grid_stride = stride;
  ms.h = h;
  ms.w = w;
  auto pairs = sensitivity_batch(net, i1, i3, anchors, opts);
  ms.matches.reserve(pairs.size());
  for (const auto& sp : pairs) ms.matches.push_back(extract_match(sp));
  return ms;
}

// ---------------------------------------------------------------------------
// CSV wire format

inline void write_matchset_csv(const std::string& path, const MatchSet& ms) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f << "anchor_i,anchor_j,p1_r,p1_c,p3_r,p3_c,score1,score3\n";
  char buf[128];
  for (const Correspondence& m : ms.matches) {
    f << m.anchor_i << ',' << m.anchor_j << ',' << m.p1_r << ',' << m.p1_c << ','
      << m.p3_r << ',' << m.p3_c << ',';
    std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", m.score1, m.score3);
    f << buf;
  }
  if (!f) throw IoError("write failed: " + path);
}

inline MatchSet read_matchset_csv(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  MatchSet ms;
  std::string line;
  if (!std::getline(f, line))
    throw IoError(path + ": empty match file");
  if (line.rfind("anchor_i,", 0) != 0)
    throw IoError(path + ": missing header row");
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    Correspondence m;
    if (std::sscanf(line.c_str(), "%d,%d,%d,%d,%d,%d,%lf,%lf", &m.anchor_i,
                    &m.anchor_j, &m.p1_r, &m.p1_c, &m.p3_r, &m.p3_c, &m.score1,
                    &m.score3) != 8)
      throw IoError(path + ": malformed row: " + line);
    m.valid = m.score1 > 0.0 || m.score3 > 0.0;
    ms.matches.push_back(m);
  }
  return ms;
}

}  // namespace mind
