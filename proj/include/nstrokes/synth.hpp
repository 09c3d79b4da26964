#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "nstrokes/curves.hpp"
#include "nstrokes/rasterizer.hpp"
#include "nstrokes/tensor.hpp"

namespace nstrokes {

/// Procedural stand-in for an artist:
///   t(s, k) = max(0, t0 + t1 sin(2 pi f s) + t2 k)
///   d(s)    = A sin(2 pi g s) n
/// with s the normalized arc length and k the chosen V channel rescaled to
/// [0,1] over the image.
struct SynthStyle {
  double t0 = 2.0, t1 = 1.0, f = 1.0, t2 = 0.0;
  int feature_channel = 0;
  double A = 1.0, g = 1.0;
  std::array<double, 3> ink = {0.0, 0.0, 0.0};
  std::array<double, 3> ink_end = {0.0, 0.0, 0.0};  // ink colour at the right edge
  bool gradient = false;

  void validate() const {
    for (double v : {t0, t1, f, t2, A, g})
      if (!std::isfinite(v)) throw DataError("synth style: non-finite coefficient");
    if (feature_channel < 0) throw DataError("synth style: negative feature channel");
    for (const auto* c : {&ink, &ink_end})
      for (double v : *c)
        if (!(v >= 0.0 && v <= 1.0)) throw DataError("synth style: ink colour outside [0,1]");
  }
};

inline StrokeSet apply_style(const SynthStyle& st, const CurveSet& base, const Tensor& V) {
  st.validate();
  require_rank(V, 3, "apply_style");
  if (st.feature_channel >= V.dim(0)) throw DataError("synth style: feature channel out of range");
  const int H = V.dim(1), W = V.dim(2);
  const size_t plane = static_cast<size_t>(H) * W;
  const float* ch = V.data() + plane * static_cast<size_t>(st.feature_channel);
  const auto [lo, hi] = std::minmax_element(ch, ch + plane);
  const double range = *hi - *lo;
  StrokeSet s = StrokeSet::undisplaced(base, 0.0);
  for (size_t i = 0; i < base.paths.size(); ++i) {
    const Polyline& p = base.paths[i];
    const Frames fr = frames(p);
    const auto arc = normalized_arclength(p);
    for (size_t j = 0; j < p.points.size(); ++j) {
      const double k = range > 0 ? (ch[nearest_pixel(p.points[j], W, H)] - *lo) / range : 0.0;
      const double sj = arc[j];
      s.thickness[i][j] = std::max(0.0, st.t0 + st.t1 * std::sin(2 * std::numbers::pi * st.f * sj) + st.t2 * k);
      s.displacement[i][j] = (st.A * std::sin(2 * std::numbers::pi * st.g * sj)) * fr.normal[j];
    }
  }
  return s;
}

/// RGB drawing from a grayscale rendering: ink colour blended over white by coverage.
inline Tensor colorize(const Tensor& rendered, const SynthStyle& st) {
  require_rank(rendered, 3, "colorize");
  const int H = rendered.dim(1), W = rendered.dim(2);
  Tensor out({3, H, W});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const double u = W > 1 ? static_cast<double>(x) / (W - 1) : 0.0;
        const double ink = st.gradient ? (1 - u) * st.ink[c] + u * st.ink_end[c] : st.ink[c];
        const double bg = rendered.at(0, y, x);
        out.at(c, y, x) = static_cast<float>(ink + (1.0 - ink) * bg);
      }
  return out;
}

/// A procedural shape view: a few non-overlapping ellipsoids seen from the
/// front, with eight analytic shading channels, plus open arcs along each
/// silhouette and an inner ring. Arcs run clockwise on screen so that the
/// curve normal points into the object.
struct SynthScene {
  CurveSet curves;
  Tensor V;  // [9,H,W]; channel 8 is the curve raster
};

inline SynthScene make_synth_scene(std::uint64_t seed, int size = 128, double spacing = 0.0) {
  if (size < 32 || size % 4 != 0) throw DataError("synthetic scene size must be a multiple of 4 and at least 32");
  if (spacing <= 0.0) spacing = default_spacing(size);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  struct Blob {
    Vec2 c;
    double rx, ry, rot;
  };
  std::vector<Blob> blobs;
  const double scale = size / 128.0;
  for (int attempt = 0; attempt < 800 && blobs.size() < 6; ++attempt) {
    Blob b;
    b.rx = b.ry = 15 * scale;
    b.rot = std::numbers::pi * unit(rng);
    const double r = std::max(b.rx, b.ry);
    const double margin = r + 4 * scale;
    if (2 * margin >= size) continue;
    b.c = {margin + (size - 2 * margin) * unit(rng), margin + (size - 2 * margin) * unit(rng)};
    bool ok = true;
    for (const auto& o : blobs) ok &= distance(o.c, b.c) > r + std::max(o.rx, o.ry) + 6 * scale;
    if (ok) blobs.push_back(b);
  }
  if (blobs.empty()) throw DataError("synthetic scene: could not place any object");

  SynthScene sc;
  const int H = size, W = size;
  sc.V = Tensor({9, H, W}, 0.0f);
  const double lx = -0.4, ly = -0.5, lz = std::sqrt(1 - lx * lx - ly * ly);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const Vec2 p{x + 0.5, y + 0.5};
      for (const auto& b : blobs) {
        const double cr = std::cos(b.rot), sr = std::sin(b.rot);
        const Vec2 q = p - b.c;
        const double u = (cr * q.x + sr * q.y) / b.rx, v = (-sr * q.x + cr * q.y) / b.ry;
        const double r2 = u * u + v * v;
        if (r2 >= 1.0) continue;
        const double z = std::sqrt(1.0 - r2);
        // Surface normal of the unit sphere mapped back to screen axes.
        const double nx = cr * u - sr * v, ny = sr * u + cr * v;
        const double r = std::sqrt(r2);
        const float vals[8] = {static_cast<float>(0.5 + 0.5 * z),
                               static_cast<float>(r2),
                               static_cast<float>(r * (1 - r)),
                               static_cast<float>(16.0 * scale / std::min(b.rx, b.ry)),
                               static_cast<float>(16.0 * scale / std::max(b.rx, b.ry)),
                               static_cast<float>(r2 * r2),
                               static_cast<float>(z),
                               static_cast<float>(std::max(0.0, nx * lx + ny * ly + z * lz))};
        for (int c = 0; c < 8; ++c) sc.V.at(c, y, x) = vals[c];
        break;
      }
    }

  auto arc = [&](const Blob& b, double k, double a0, double span) {
    Polyline p;
    const int n = 720;
    const double cr = std::cos(b.rot), sr = std::sin(b.rot);
    for (int i = 0; i <= n; ++i) {
      const double a = a0 - span * i / n;
      const double u = k * b.rx * std::cos(a), v = k * b.ry * std::sin(a);
      p.points.push_back(b.c + Vec2{cr * u - sr * v, sr * u + cr * v});
    }
    return resample_uniform(p, spacing);
  };
  for (const auto& b : blobs) {
    sc.curves.paths.push_back(arc(b, 1.0, 2 * std::numbers::pi * unit(rng), std::numbers::pi * (1.1 + 0.5 * unit(rng))));
    sc.curves.paths.push_back(arc(b, 0.7, 2 * std::numbers::pi * unit(rng), std::numbers::pi * (0.8 + 0.5 * unit(rng))));
    sc.curves.paths.push_back(arc(b, 0.4, 2 * std::numbers::pi * unit(rng), std::numbers::pi * (0.6 + 0.4 * unit(rng))));
  }
  const Tensor raster = rasterize_curve_channel(sc.curves, H, W);
  std::copy(raster.values().begin(), raster.values().end(), sc.V.data() + static_cast<size_t>(8) * H * W);
  return sc;
}

struct StyleError {
  double thickness_mae = 0.0;     // mean |t_pred - t_true| over points
  double displacement_mae = 0.0;  // mean |d_pred - d_true| (Euclidean) over points
  double max_true_thickness = 0.0;
  size_t points = 0;
};

inline StyleError compare_strokes(const StrokeSet& pred, const StrokeSet& truth) {
  pred.validate();
  truth.validate();
  if (pred.path_count() != truth.path_count()) throw DataError("compare_strokes: path counts differ");
  StyleError e;
  for (size_t i = 0; i < truth.path_count(); ++i) {
    if (pred.thickness[i].size() != truth.thickness[i].size()) throw DataError("compare_strokes: point counts differ");
    for (size_t j = 0; j < truth.thickness[i].size(); ++j) {
      e.thickness_mae += std::abs(pred.thickness[i][j] - truth.thickness[i][j]);
      e.displacement_mae += distance(pred.displacement[i][j], truth.displacement[i][j]);
      e.max_true_thickness = std::max(e.max_true_thickness, truth.thickness[i][j]);
      ++e.points;
    }
  }
  if (e.points) {
    e.thickness_mae /= static_cast<double>(e.points);
    e.displacement_mae /= static_cast<double>(e.points);
  }
  return e;
}

}  // namespace nstrokes
