#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "mind/flow_io.hpp"
#include "mind/matcher.hpp"
#include "mind/tensor.hpp"

namespace mind {

struct MetricReport {
  std::optional<double> ape;
  std::vector<std::pair<double, double>> accuracy;  // (threshold, fraction)
  std::optional<double> ie, ne;
  int match_count = 0;
};

/// Endpoint error of one correspondence against the flow at its first-frame
/// point: || p3 - (p1 + flow(p1)) ||.
inline double match_error(const Correspondence& m, const FlowField& gt) {
  const std::size_t i = gt.index(m.p1_r, m.p1_c);
  const double ex = m.p3_c - (m.p1_c + gt.u[i]);
  const double ey = m.p3_r - (m.p1_r + gt.v[i]);
  return std::sqrt(ex * ex + ey * ey);
}

inline bool usable(const Correspondence& m, const FlowField& gt) {
  return m.valid && m.p1_r >= 0 && m.p1_r < gt.h && m.p1_c >= 0 && m.p1_c < gt.w &&
         gt.valid[gt.index(m.p1_r, m.p1_c)];
}

/// Mean endpoint error over matches whose first-frame point carries valid
/// ground truth. Absent when no match qualifies.
inline std::optional<double> average_point_error(const MatchSet& ms,
                                                 const FlowField& gt) {
  double sum = 0.0;
  int count = 0;
  for (const Correspondence& m : ms.matches)
    if (usable(m, gt)) {
      sum += match_error(m, gt);
      ++count;
    }
  if (count == 0) return std::nullopt;
  return sum / count;
}

/// Fraction of usable matches with endpoint error strictly below t.
inline std::optional<double> accuracy_at(const MatchSet& ms, const FlowField& gt,
                                         double t) {
  int good = 0, count = 0;
  for (const Correspondence& m : ms.matches)
    if (usable(m, gt)) {
      ++count;
      if (match_error(m, gt) < t) ++good;
    }
  if (count == 0) return std::nullopt;
  return static_cast<double>(good) / count;
}

/// Root-mean-square difference per pixel; for colour the squared L2 norm of
/// the RGB difference vector.
inline double interpolation_error(const Tensor& pred, const Tensor& gt) {
  require_same_shape(pred, gt, "interpolation_error");
  double sum = 0.0;
  const std::size_t pixels = static_cast<std::size_t>(pred.n) * pred.h * pred.w;
  for (int b = 0; b < pred.n; ++b)
    for (int y = 0; y < pred.h; ++y)
      for (int x = 0; x < pred.w; ++x) {
        double px = 0.0;
        for (int c = 0; c < pred.c; ++c) {
          const double d = pred.at(b, c, y, x) - gt.at(b, c, y, x);
          px += d * d;
        }
        sum += px;
      }
  return std::sqrt(sum / static_cast<double>(pixels));
}

namespace detail {

/// Squared gradient magnitude of the image at one pixel, summed over
/// channels. Central differences inside, one-sided at the borders.
inline double grad_sq(const Tensor& t, int b, int y, int x) {
  double acc = 0.0;
  for (int c = 0; c < t.c; ++c) {
    double gx, gy;
    if (x == 0)
      gx = t.at(b, c, y, 1) - t.at(b, c, y, 0);
    else if (x == t.w - 1)
      gx = t.at(b, c, y, x) - t.at(b, c, y, x - 1);
    else
      gx = 0.5 * (t.at(b, c, y, x + 1) - t.at(b, c, y, x - 1));
    if (y == 0)
      gy = t.at(b, c, 1, x) - t.at(b, c, 0, x);
    else if (y == t.h - 1)
      gy = t.at(b, c, y, x) - t.at(b, c, y - 1, x);
    else
      gy = 0.5 * (t.at(b, c, y + 1, x) - t.at(b, c, y - 1, x));
    acc += gx * gx + gy * gy;
  }
  return acc;
}

}  // namespace detail

/// Interpolation error normalised by the local ground-truth gradient energy
/// plus 1.
inline double normalized_interpolation_error(const Tensor& pred, const Tensor& gt) {
  require_same_shape(pred, gt, "normalized_interpolation_error");
  if (gt.w < 2 || gt.h < 2)
    throw ShapeError("normalized_interpolation_error: image too small");
  double sum = 0.0;
  const std::size_t pixels = static_cast<std::size_t>(pred.n) * pred.h * pred.w;
  for (int b = 0; b < pred.n; ++b)
    for (int y = 0; y < pred.h; ++y)
      for (int x = 0; x < pred.w; ++x) {
        double px = 0.0;
        for (int c = 0; c < pred.c; ++c) {
          const double d = pred.at(b, c, y, x) - gt.at(b, c, y, x);
          px += d * d;
        }
        sum += px / (detail::grad_sq(gt, b, y, x) + 1.0);
      }
  return std::sqrt(sum / static_cast<double>(pixels));
}

/// Exhaustive SSD block matching, the classical stand-in baseline. Anchors
/// live on a stride grid in the first frame; each searches frame 3 within
/// +-radius. Candidate displacements are visited nearest-first so flat
/// regions resolve to zero motion.
inline MatchSet block_match_baseline(const Tensor& i1, const Tensor& i3, int stride,
                                     int window, int radius) {
  require_same_shape(i1, i3, "block_match_baseline");
  if (window < 1 || window % 2 == 0)
    throw ShapeError("block_match_baseline: window must be odd");
  if (radius < 0 || stride < 1) throw ShapeError("block_match_baseline: bad args");

  std::vector<std::pair<int, int>> disp;  // (dy, dx)
  for (int dy = -radius; dy <= radius; ++dy)
    for (int dx = -radius; dx <= radius; ++dx) disp.emplace_back(dy, dx);
  std::stable_sort(disp.begin(), disp.end(), [](auto a, auto b) {
    const int la = a.first * a.first + a.second * a.second;
    const int lb = b.first * b.first + b.second * b.second;
    if (la != lb) return la < lb;
    return a < b;
  });

  const int hw = window / 2;
  MatchSet ms;
  ms.grid_stride = stride;
  ms.h = i1.h;
  ms.w = i1.w;
  for (int r = 0; r < i1.h; r += stride)
    for (int c = 0; c < i1.w; c += stride) {
      double best = 1e300;
      int best_dy = 0, best_dx = 0;
      for (const auto& [dy, dx] : disp) {
        if (r + dy < 0 || r + dy >= i1.h || c + dx < 0 || c + dx >= i1.w) continue;
        double ssd = 0.0;
        for (int oy = -hw; oy <= hw; ++oy)
          for (int ox = -hw; ox <= hw; ++ox) {
            const int y1 = r + oy, x1 = c + ox;
            const int y3 = r + dy + oy, x3 = c + dx + ox;
            if (y1 < 0 || y1 >= i1.h || x1 < 0 || x1 >= i1.w) continue;
            if (y3 < 0 || y3 >= i1.h || x3 < 0 || x3 >= i1.w) continue;
            for (int ch = 0; ch < i1.c; ++ch) {
              const double d = i1.at(0, ch, y1, x1) - i3.at(0, ch, y3, x3);
              ssd += d * d;
            }
          }
        if (ssd < best) {
          best = ssd;
          best_dy = dy;
          best_dx = dx;
        }
      }
      Correspondence m;
      m.anchor_i = r;
      m.anchor_j = c;
      m.p1_r = r;
      m.p1_c = c;
      m.p3_r = r + best_dy;
      m.p3_c = c + best_dx;
      m.score1 = m.score3 = 1.0 / (1.0 + best);
      ms.matches.push_back(m);
    }
  return ms;
}

/// Ranks matches by score, keeps the top fraction, then computes every
/// metric over the survivors. Default thresholds suit full-resolution
/// frames; desk-resolution runs pass {1,2,3,5}.
inline MetricReport evaluate(const MatchSet& ms, const FlowField& gt,
                             const std::vector<double>& thresholds = {5, 10, 20, 30},
                             double top_fraction = 1.0,
                             const Tensor* pred = nullptr,
                             const Tensor* gt_frame = nullptr) {
  if (top_fraction <= 0.0 || top_fraction > 1.0)
    throw ShapeError("evaluate: top_fraction must be in (0,1]");

  MatchSet kept;
  kept.grid_stride = ms.grid_stride;
  kept.h = ms.h;
  kept.w = ms.w;
  kept.matches = ms.matches;
  std::stable_sort(kept.matches.begin(), kept.matches.end(),
                   [](const Correspondence& a, const Correspondence& b) {
                     return a.score() > b.score();
                   });
  const std::size_t keep =
      static_cast<std::size_t>(std::ceil(top_fraction * kept.matches.size()));
  kept.matches.resize(std::min(keep, kept.matches.size()));

  MetricReport rep;
  rep.match_count = static_cast<int>(kept.matches.size());
  rep.ape = average_point_error(kept, gt);
  for (double t : thresholds) {
    auto a = accuracy_at(kept, gt, t);
    rep.accuracy.emplace_back(t, a.value_or(0.0));
  }
  if (pred && gt_frame) {
    rep.ie = interpolation_error(*pred, *gt_frame);
    rep.ne = normalized_interpolation_error(*pred, *gt_frame);
  }
  return rep;
}

}  // namespace mind
