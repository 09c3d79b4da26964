#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <span>
#include <vector>

#include "nstrokes/rasterizer.hpp"

namespace nstrokes {

struct RasterCheckOptions {
  double step = 1e-2;
  double aa_width = 1.0;
};

struct RasterCheckResult {
  double max_rel_err = 0.0;
  int checked = 0;
  int masked_pixels = 0;  // pixel probes dropped because they cross a non-smooth point
};

namespace detail {

// Smoothness class of one pixel: which segment wins, whether u is clamped
// and whether coverage is clamped. A pixel whose class is the same at both
// probes and at the base point is smooth over the probe interval.
struct PixelClass {
  int path, seg, u_state, alpha_state;
  friend bool operator==(const PixelClass&, const PixelClass&) = default;
};

inline PixelClass pixel_class(const PixelHit& h) {
  return {h.path, h.seg, h.u <= 0.0 ? 0 : h.u >= 1.0 ? 2 : 1, h.path < 0 ? 0 : h.coverage >= 1.0 ? 2 : 1};
}

}  // namespace detail

/// Central finite differences of sum(weights * render(strokes)) against
/// render_backward, over every displacement component and thickness. For
/// each probe, pixels that change smoothness class are dropped from both
/// sides. Relative error is |a - n| / max(1, |n|).
inline RasterCheckResult raster_gradcheck(const StrokeSet& strokes, const Viewport& vp, std::span<const float> weights,
                                          const RasterCheckOptions& opt = {}) {
  const RenderResult base = render(strokes, vp, opt.aa_width);
  RasterCheckResult out;
  StrokeSet probe = strokes;
  Buffer mask(weights.size());
  auto check = [&](double& slot, auto&& analytic_of) {
    const double orig = slot;
    slot = orig + opt.step;
    const RenderResult hi = render(probe, vp, opt.aa_width);
    slot = orig - opt.step;
    const RenderResult lo = render(probe, vp, opt.aa_width);
    slot = orig;
    double numeric = 0.0;
    for (size_t k = 0; k < weights.size(); ++k) {
      const auto c = detail::pixel_class(base.record.pixels[k]);
      const bool smooth = c == detail::pixel_class(hi.record.pixels[k]) && c == detail::pixel_class(lo.record.pixels[k]);
      if (!smooth && weights[k] != 0.0f) ++out.masked_pixels;
      mask[k] = smooth ? weights[k] : 0.0f;
      numeric += static_cast<double>(mask[k]) * (static_cast<double>(hi.image[k]) - lo.image[k]);
    }
    numeric /= 2.0 * opt.step;
    const double analytic = analytic_of(render_backward(strokes, base.record, mask));
    out.max_rel_err = std::max(out.max_rel_err, std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric)));
    ++out.checked;
  };
  for (size_t i = 0; i < strokes.path_count(); ++i) {
    for (size_t j = 0; j < strokes.base.paths[i].points.size(); ++j) {
      check(probe.displacement[i][j].x, [&](const StrokeGradient& g) { return g.displacement[i][j].x; });
      check(probe.displacement[i][j].y, [&](const StrokeGradient& g) { return g.displacement[i][j].y; });
      if (strokes.thickness[i][j] >= opt.step)
        check(probe.thickness[i][j], [&](const StrokeGradient& g) { return g.thickness[i][j]; });
    }
  }
  return out;
}

/// Small random scene inside a size x size canvas: up to max_strokes
/// polylines of 2-5 points, thickness in [1, 5], small displacements.
inline StrokeSet random_raster_scene(std::mt19937_64& rng, int size = 32, int max_strokes = 3) {
  std::uniform_int_distribution<int> nstrokes(1, max_strokes), npts(2, 5);
  std::uniform_real_distribution<double> pos(3.0, size - 3.0), step(-8.0, 8.0), thick(1.0, 5.0), disp(-0.7, 0.7);
  CurveSet curves;
  const int n = nstrokes(rng);
  for (int i = 0; i < n; ++i) {
    Polyline p;
    Vec2 cur{pos(rng), pos(rng)};
    const int m = npts(rng);
    for (int j = 0; j < m; ++j) {
      p.points.push_back(cur);
      Vec2 next;
      do {
        next = cur + Vec2{step(rng), step(rng)};
      } while (distance(next, cur) < 2.0);
      next.x = std::clamp(next.x, 1.0, size - 1.0);
      next.y = std::clamp(next.y, 1.0, size - 1.0);
      cur = next;
    }
    curves.paths.push_back(std::move(p));
  }
  StrokeSet s = StrokeSet::undisplaced(std::move(curves), 0.0);
  for (size_t i = 0; i < s.path_count(); ++i)
    for (size_t j = 0; j < s.thickness[i].size(); ++j) {
      s.thickness[i][j] = thick(rng);
      s.displacement[i][j] = {disp(rng), disp(rng)};
    }
  return s;
}

}  // namespace nstrokes
