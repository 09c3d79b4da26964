#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <span>
#include <vector>

#include "nstrokes/geometry.hpp"
#include "nstrokes/tensor.hpp"

namespace nstrokes {

/// Window of the image plane being rendered; pixel (row i, col j) of the
/// viewport has center (x0 + j + 0.5, y0 + i + 0.5).
struct Viewport {
  int x0 = 0;
  int y0 = 0;
  int width = 1;
  int height = 1;

  void validate() const {
    if (width < 1 || height < 1) throw DataError("viewport must be at least 1x1");
  }
  Vec2 pixel_center(int row, int col) const { return {x0 + col + 0.5, y0 + row + 0.5}; }
  friend bool operator==(const Viewport&, const Viewport&) = default;
};

struct ClosestPoint {
  double distance = 0.0;
  double u = 0.0;
};

namespace detail {

// Zero-length segments are treated as a point at a (u = 0).
inline ClosestPoint closest_point_unchecked(Vec2 p, Vec2 a, Vec2 b) {
  const Vec2 v = b - a;
  const double len2 = dot(v, v);
  double u = 0.0;
  if (len2 > 0.0) u = std::clamp(dot(p - a, v) / len2, 0.0, 1.0);
  const Vec2 q = a + u * v;
  return {distance(p, q), u};
}

}  // namespace detail

/// Distance from p to segment ab and the clamped parameter of the closest point.
inline ClosestPoint closest_point(Vec2 p, Vec2 a, Vec2 b) {
  if (a == b) throw DataError("closest_point: degenerate segment");
  return detail::closest_point_unchecked(p, a, b);
}

/// Flattened segment list of a StrokeSet in (path, segment) order.
struct SegmentTable {
  struct Segment {
    int path;
    int seg;  // index of the first endpoint within the path
    int ia, ib;
    Vec2 a, b;
    double ta, tb;
  };
  std::vector<Segment> segments;
  double max_thickness = 0.0;

  explicit SegmentTable(const StrokeSet& strokes) {
    strokes.validate();
    for (size_t i = 0; i < strokes.path_count(); ++i) {
      const int m = static_cast<int>(strokes.base.paths[i].points.size());
      if (m == 0) continue;
      const int nseg = m == 1 ? 1 : m - 1;
      for (int s = 0; s < nseg; ++s) {
        const int ia = s, ib = m == 1 ? 0 : s + 1;
        Segment seg{static_cast<int>(i), s, ia, ib, strokes.position(i, ia), strokes.position(i, ib),
                    strokes.thickness[i][ia], strokes.thickness[i][ib]};
        max_thickness = std::max({max_thickness, seg.ta, seg.tb});
        segments.push_back(seg);
      }
    }
  }
};

/// Uniform bins over a viewport listing, in table order, every segment whose
/// bounding box inflated by max_thickness/2 + aa_width meets the cell.
class SegmentGrid {
 public:
  SegmentGrid(const SegmentTable& table, const Viewport& vp, double aa_width, int cell_size = 4)
      : vp_(vp), cell_(cell_size) {
    vp.validate();
    nx_ = (vp.width + cell_ - 1) / cell_;
    ny_ = (vp.height + cell_ - 1) / cell_;
    cells_.assign(static_cast<size_t>(nx_) * ny_, {});
    const double r = table.max_thickness / 2.0 + aa_width;
    for (size_t k = 0; k < table.segments.size(); ++k) {
      const auto& s = table.segments[k];
      const double lx = std::min(s.a.x, s.b.x) - r - vp.x0, hx = std::max(s.a.x, s.b.x) + r - vp.x0;
      const double ly = std::min(s.a.y, s.b.y) - r - vp.y0, hy = std::max(s.a.y, s.b.y) + r - vp.y0;
      const int cx0 = std::max(0, static_cast<int>(std::floor(lx / cell_)));
      const int cx1 = std::min(nx_ - 1, static_cast<int>(std::floor(hx / cell_)));
      const int cy0 = std::max(0, static_cast<int>(std::floor(ly / cell_)));
      const int cy1 = std::min(ny_ - 1, static_cast<int>(std::floor(hy / cell_)));
      for (int cy = cy0; cy <= cy1; ++cy)
        for (int cx = cx0; cx <= cx1; ++cx) cells_[static_cast<size_t>(cy) * nx_ + cx].push_back(static_cast<int>(k));
    }
  }

  int cell_size() const { return cell_; }
  int cells_x() const { return nx_; }
  int cells_y() const { return ny_; }
  const std::vector<int>& cell(int cx, int cy) const { return cells_[static_cast<size_t>(cy) * nx_ + cx]; }
  const std::vector<int>& cell_for_pixel(int row, int col) const { return cell(col / cell_, row / cell_); }

 private:
  Viewport vp_;
  int cell_;
  int nx_ = 0, ny_ = 0;
  std::vector<std::vector<int>> cells_;
};

/// Closest-segment hit of one pixel; path < 0 when the pixel has zero coverage.
struct PixelHit {
  int path = -1;
  int seg = -1;
  double u = 0.0;
  double distance = 0.0;
  double thickness = 0.0;
  double coverage = 0.0;
};

struct RenderRecord {
  Viewport viewport;
  double aa_width = 1.0;
  std::uint64_t fingerprint = 0;
  std::vector<PixelHit> pixels;  // row-major over the viewport
};

struct RenderResult {
  Tensor image;  // [1, h, w], 1 = background, 0 = full ink
  RenderRecord record;
};

/// Per-point gradients with respect to displacement and thickness.
struct StrokeGradient {
  std::vector<std::vector<Vec2>> displacement;
  std::vector<std::vector<double>> thickness;
};

namespace detail {

inline std::uint64_t fingerprint(const StrokeSet& s, const Viewport& vp, double aa) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const void* p, size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ull;
    }
  };
  mix(&vp, sizeof(vp));
  mix(&aa, sizeof(aa));
  for (size_t i = 0; i < s.path_count(); ++i) {
    const size_t m = s.base.paths[i].points.size();
    mix(&m, sizeof(m));
    for (size_t j = 0; j < m; ++j) {
      const Vec2 p = s.position(i, j);
      mix(&p, sizeof(p));
      mix(&s.thickness[i][j], sizeof(double));
    }
  }
  return h;
}

inline double coverage(double thickness, double dist, double aa) {
  return std::clamp(0.5 + (thickness / 2.0 - dist) / aa, 0.0, 1.0);
}

template <class CandidateFn>
RenderResult render_with(const StrokeSet& strokes, const Viewport& vp, double aa, const SegmentTable& table,
                         CandidateFn&& candidates) {
  if (!(aa > 0.0)) throw DataError("render: aa_width must be positive");
  vp.validate();
  RenderResult res;
  res.image = Tensor({1, vp.height, vp.width}, 1.0f);
  res.record.viewport = vp;
  res.record.aa_width = aa;
  res.record.fingerprint = fingerprint(strokes, vp, aa);
  res.record.pixels.assign(static_cast<size_t>(vp.width) * vp.height, PixelHit{});
  for (int row = 0; row < vp.height; ++row) {
    for (int col = 0; col < vp.width; ++col) {
      const Vec2 p = vp.pixel_center(row, col);
      int best = -1;
      ClosestPoint bc{std::numeric_limits<double>::infinity(), 0.0};
      for (int k : candidates(row, col)) {
        const auto& s = table.segments[static_cast<size_t>(k)];
        const ClosestPoint c = closest_point_unchecked(p, s.a, s.b);
        if (c.distance < bc.distance) {
          bc = c;
          best = k;
        }
      }
      if (best < 0) continue;
      const auto& s = table.segments[static_cast<size_t>(best)];
      const double t = (1.0 - bc.u) * s.ta + bc.u * s.tb;
      const double a = coverage(t, bc.distance, aa);
      if (a <= 0.0) continue;
      const size_t idx = static_cast<size_t>(row) * vp.width + col;
      res.image[idx] = static_cast<float>(1.0 - a);
      res.record.pixels[idx] = PixelHit{s.path, s.seg, bc.u, bc.distance, t, a};
    }
  }
  return res;
}

}  // namespace detail

/// Anti-aliased rendering of strokes: each pixel takes the global closest
/// point over all segments, interpolates thickness linearly along that
/// segment and applies a linear coverage ramp of width aa_width around the
/// stroke boundary.
inline RenderResult render(const StrokeSet& strokes, const Viewport& vp, double aa_width = 1.0) {
  if (strokes.path_count() == 0) throw DataError("render: empty stroke set");
  const SegmentTable table(strokes);
  const SegmentGrid grid(table, vp, aa_width);
  return detail::render_with(strokes, vp, aa_width, table,
                             [&](int row, int col) -> const std::vector<int>& { return grid.cell_for_pixel(row, col); });
}

/// Exhaustive O(pixels x segments) reference renderer.
inline RenderResult render_bruteforce(const StrokeSet& strokes, const Viewport& vp, double aa_width = 1.0) {
  if (strokes.path_count() == 0) throw DataError("render: empty stroke set");
  const SegmentTable table(strokes);
  std::vector<int> all(table.segments.size());
  for (size_t k = 0; k < all.size(); ++k) all[k] = static_cast<int>(k);
  return detail::render_with(strokes, vp, aa_width, table,
                             [&](int, int) -> const std::vector<int>& { return all; });
}

/// Gradients of sum(grad_image * image) with respect to every point's
/// displacement and thickness. Only pixels strictly inside the coverage
/// ramp contribute; the closest-segment choice is held fixed.
inline StrokeGradient render_backward(const StrokeSet& strokes, const RenderRecord& rec,
                                      std::span<const float> grad_image) {
  if (detail::fingerprint(strokes, rec.viewport, rec.aa_width) != rec.fingerprint)
    throw DataError("render_backward: stale render record");
  if (grad_image.size() != rec.pixels.size()) throw ShapeError("render_backward: gradient image size mismatch");
  StrokeGradient g;
  for (size_t i = 0; i < strokes.path_count(); ++i) {
    g.displacement.emplace_back(strokes.base.paths[i].points.size(), Vec2{});
    g.thickness.emplace_back(strokes.base.paths[i].points.size(), 0.0);
  }
  const double aa = rec.aa_width;
  const Viewport& vp = rec.viewport;
  for (int row = 0; row < vp.height; ++row) {
    for (int col = 0; col < vp.width; ++col) {
      const size_t idx = static_cast<size_t>(row) * vp.width + col;
      const PixelHit& h = rec.pixels[idx];
      if (h.path < 0 || h.coverage >= 1.0 || grad_image[idx] == 0.0f) continue;
      // value = 1 - alpha
      const double g_alpha = -static_cast<double>(grad_image[idx]);
      const auto& pts = strokes.base.paths[static_cast<size_t>(h.path)].points;
      const int ia = h.seg;
      const int ib = pts.size() == 1 ? 0 : h.seg + 1;
      const Vec2 a = strokes.position(h.path, ia);
      const Vec2 b = strokes.position(h.path, ib);
      const double ta = strokes.thickness[h.path][ia];
      const double tb = strokes.thickness[h.path][ib];
      const Vec2 p = vp.pixel_center(row, col);
      const double g_t = g_alpha / (2.0 * aa);
      const double g_dist = -g_alpha / aa;

      g.thickness[h.path][ia] += (1.0 - h.u) * g_t;
      g.thickness[h.path][ib] += h.u * g_t;

      Vec2 grad_a{}, grad_b{};
      const Vec2 v = b - a;
      const double len2 = dot(v, v);
      const Vec2 q = a + h.u * v;
      if (h.distance > 0.0) {
        const Vec2 dq = (1.0 / h.distance) * (q - p);
        grad_a += (g_dist * (1.0 - h.u)) * dq;
        grad_b += (g_dist * h.u) * dq;
      }
      // Thickness at the closest point moves with u when u is interior.
      if (len2 > 0.0 && h.u > 0.0 && h.u < 1.0 && ta != tb) {
        const Vec2 w = p - a;
        const double k = g_t * (tb - ta) / len2;
        grad_a += k * (2.0 * h.u * v - w - v);
        grad_b += k * (w - 2.0 * h.u * v);
      }
      g.displacement[h.path][ia] += grad_a;
      if (ib != ia) g.displacement[h.path][ib] += grad_b;
    }
  }
  return g;
}

}  // namespace nstrokes
