#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "nstrokes/geometry.hpp"
#include "nstrokes/rasterizer.hpp"
#include "nstrokes/tensor.hpp"

namespace nstrokes {

/// Resample spacing used at a given resolution: 2 px at 768, scaled linearly.
inline double default_spacing(int resolution) { return 2.0 * resolution / 768.0; }

/// Arc-length-uniform resampling that keeps both endpoints. All segments
/// have length `spacing` (measured along the input) except the last, which
/// absorbs the remainder; a remainder under 10% of spacing is merged into it.
inline Polyline resample_uniform(const Polyline& path, double spacing) {
  if (!(spacing > 0.0)) throw DataError("resample_uniform: spacing must be positive");
  if (path.points.size() < 2) throw DataError("resample_uniform: path needs at least 2 points");
  const double total = path.length();
  if (!(total > 0.0)) throw DataError("resample_uniform: zero-length path");

  const int whole = static_cast<int>(std::floor(total / spacing + 1e-9));
  std::vector<double> targets;
  for (int k = 0; k <= whole; ++k) targets.push_back(k * spacing);
  const double rem = total - targets.back();
  if (rem > 0.1 * spacing || targets.size() < 2) {
    targets.push_back(total);
  } else {
    targets.back() = total;
  }

  Polyline out;
  out.points.reserve(targets.size());
  size_t seg = 0;
  double seg_start = 0.0;
  for (double s : targets) {
    while (seg + 1 < path.points.size() - 1 &&
           seg_start + distance(path.points[seg], path.points[seg + 1]) < s) {
      seg_start += distance(path.points[seg], path.points[seg + 1]);
      ++seg;
    }
    const Vec2 a = path.points[seg], b = path.points[seg + 1];
    const double len = distance(a, b);
    const double u = len > 0.0 ? std::clamp((s - seg_start) / len, 0.0, 1.0) : 0.0;
    out.points.push_back(a + u * (b - a));
  }
  out.points.front() = path.points.front();
  out.points.back() = path.points.back();
  return out;
}

inline CurveSet resample_uniform(const CurveSet& curves, double spacing) {
  CurveSet out;
  for (const auto& p : curves.paths) out.paths.push_back(resample_uniform(p, spacing));
  return out;
}

/// Per-point unit tangent and normal (tangent rotated so that (1,0) maps to
/// (0,-1), i.e. counter-clockwise on screen with y pointing down).
struct Frames {
  std::vector<Vec2> tangent;
  std::vector<Vec2> normal;
};

inline Vec2 normal_of(Vec2 tangent) { return {tangent.y, -tangent.x}; }

inline Frames frames(const Polyline& path) {
  const auto& p = path.points;
  if (p.size() < 2) throw DataError("frames: path needs at least 2 points");
  Frames f;
  f.tangent.resize(p.size());
  f.normal.resize(p.size());
  for (size_t j = 0; j < p.size(); ++j) {
    const Vec2 prev = p[j == 0 ? 0 : j - 1];
    const Vec2 next = p[j + 1 == p.size() ? j : j + 1];
    const Vec2 d = next - prev;
    const double len = norm(d);
    if (!(len > 0.0)) throw DataError("frames: coincident neighbor points at index " + std::to_string(j));
    f.tangent[j] = (1.0 / len) * d;
    f.normal[j] = normal_of(f.tangent[j]);
  }
  return f;
}

/// Cumulative arc length divided by total length: 0 at the first point, 1 at the last.
inline std::vector<double> normalized_arclength(const Polyline& path) {
  const auto& p = path.points;
  if (p.size() < 2) throw DataError("normalized_arclength: path needs at least 2 points");
  std::vector<double> s(p.size(), 0.0);
  for (size_t j = 1; j < p.size(); ++j) s[j] = s[j - 1] + distance(p[j - 1], p[j]);
  const double total = s.back();
  for (auto& v : s) v = total > 0.0 ? v / total : 0.0;
  s.back() = 1.0;
  return s;
}

/// Nearest-pixel index: floor of the coordinate relative to the map origin,
/// clamped to the border.
inline int nearest_pixel(Vec2 p, int width, int height, int x0 = 0, int y0 = 0) {
  const int x = std::clamp(static_cast<int>(std::floor(p.x - x0)), 0, width - 1);
  const int y = std::clamp(static_cast<int>(std::floor(p.y - y0)), 0, height - 1);
  return y * width + x;
}

inline constexpr int kDeepFeatureChannels = 40;
inline constexpr int kCurveFeatureChannels = 5;
inline constexpr int kPathFeatureChannels = kDeepFeatureChannels + kCurveFeatureChannels;

/// Raw curve features of points [begin, end) as [5, m]: tangent (2),
/// normal (2), normalized arc length, with tangent and normal optionally negated.
inline Tensor curve_feature_rows(const Frames& fr, const std::vector<double>& arclen, size_t begin, size_t end,
                                 bool flipped) {
  const int m = static_cast<int>(end - begin);
  Tensor out({kCurveFeatureChannels, m});
  const double sign = flipped ? -1.0 : 1.0;
  for (int j = 0; j < m; ++j) {
    const size_t k = begin + static_cast<size_t>(j);
    out[0 * m + j] = static_cast<float>(sign * fr.tangent[k].x);
    out[1 * m + j] = static_cast<float>(sign * fr.tangent[k].y);
    out[2 * m + j] = static_cast<float>(sign * fr.normal[k].x);
    out[3 * m + j] = static_cast<float>(sign * fr.normal[k].y);
    out[4 * m + j] = static_cast<float>(arclen[k]);
  }
  return out;
}

/// The two per-path feature maps, stored channel-major as [45, M] so that
/// column j describes point j: rows 0-39 deep features, 40-41 tangent,
/// 42-43 normal, 44 normalized arc length. `flipped` negates rows 40-43.
struct PathFeatures {
  Tensor forward;
  Tensor flipped;
};

inline PathFeatures build_path_features(const Polyline& path, const Tensor& deep) {
  require_rank(deep, 3, "build_path_features");
  if (deep.dim(0) != kDeepFeatureChannels)
    throw ShapeError("build_path_features: feature map must have 40 channels, got " + shape_str(deep.shape()));
  const Frames fr = frames(path);
  const auto s = normalized_arclength(path);
  const int m = static_cast<int>(path.points.size());
  const int H = deep.dim(1), W = deep.dim(2);
  const size_t plane = static_cast<size_t>(H) * W;
  PathFeatures pf{Tensor({kPathFeatureChannels, m}), Tensor({kPathFeatureChannels, m})};
  for (int j = 0; j < m; ++j) {
    const int px = nearest_pixel(path.points[static_cast<size_t>(j)], W, H);
    for (int c = 0; c < kDeepFeatureChannels; ++c) {
      pf.forward[static_cast<size_t>(c) * m + j] = deep[c * plane + px];
      pf.flipped[static_cast<size_t>(c) * m + j] = deep[c * plane + px];
    }
  }
  for (bool flip : {false, true}) {
    const Tensor rows = curve_feature_rows(fr, s, 0, static_cast<size_t>(m), flip);
    Tensor& dst = flip ? pf.flipped : pf.forward;
    std::copy(rows.values().begin(), rows.values().end(), dst.data() + static_cast<size_t>(kDeepFeatureChannels) * m);
  }
  return pf;
}

inline CurveSet apply_displacement(const StrokeSet& strokes) {
  strokes.validate();
  CurveSet out = strokes.base;
  for (size_t i = 0; i < out.paths.size(); ++i)
    for (size_t j = 0; j < out.paths[i].points.size(); ++j) out.paths[i].points[j] += strokes.displacement[i][j];
  return out;
}

/// Curve raster channel for a feature stack: curves drawn 1 px wide with the
/// renderer's coverage rule, ink = 1 on background 0.
inline Tensor rasterize_curve_channel(const CurveSet& curves, int height, int width) {
  Tensor out({1, height, width}, 0.0f);
  if (curves.paths.empty()) return out;
  const auto res = render(StrokeSet::undisplaced(curves, 1.0), Viewport{0, 0, width, height}, 1.0);
  for (size_t i = 0; i < out.size(); ++i) out[i] = 1.0f - res.image[i];
  return out;
}

}  // namespace nstrokes
