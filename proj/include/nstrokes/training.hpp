#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "nstrokes/curves.hpp"
#include "nstrokes/models.hpp"
#include "nstrokes/ops.hpp"
#include "nstrokes/rasterizer.hpp"

namespace nstrokes {

struct LossWeights {
  double b = 1.0;   // mask
  double s = 0.02;  // shape regularizer
  double t = 1.0;   // texture
  double a = 1.0;   // adversarial
};

struct TrainConfig {
  double lr = 2e-4;
  int batch = 16;
  int iterations = 2000;
  std::uint64_t seed = 0;
  double min_ink = 0.01;
  double aa_width = 1.0;
  double spacing = 0.0;  // 0: default_spacing(image size)
  double margin = 8.0;
  std::vector<int> scales = {64, 128, 192, 256};
  int max_draws = 1000;
  double base_thickness = 1.0;
  LossWeights weights;
  ops::Reduction reduction = ops::Reduction::mean;
};

/// Binarize at `ink_threshold` on luminance (ink 0, background 1) and soften
/// with a normalized (2r+1)^2 box filter, clamping at the border.
inline Tensor extract_soft_mask(const Tensor& drawing, double ink_threshold = 0.5, int blur_radius = 1) {
  require_rank(drawing, 3, "extract_soft_mask");
  const int C = drawing.dim(0), H = drawing.dim(1), W = drawing.dim(2);
  if (C != 1 && C != 3) throw ShapeError("extract_soft_mask: expected 1 or 3 channels, got " + shape_str(drawing.shape()));
  if (blur_radius < 0) throw DataError("extract_soft_mask: negative blur radius");
  Buffer bin(static_cast<size_t>(H) * W);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const double lum = C == 1 ? drawing.at(0, y, x)
                                : 0.299 * drawing.at(0, y, x) + 0.587 * drawing.at(1, y, x) + 0.114 * drawing.at(2, y, x);
      bin[static_cast<size_t>(y) * W + x] = lum < ink_threshold ? 0.0f : 1.0f;
    }
  Tensor out({1, H, W});
  const int r = blur_radius;
  const double norm = 1.0 / ((2.0 * r + 1) * (2.0 * r + 1));
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double s = 0;
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
          const int yy = std::clamp(y + dy, 0, H - 1), xx = std::clamp(x + dx, 0, W - 1);
          s += bin[static_cast<size_t>(yy) * W + xx];
        }
      out.at(0, y, x) = static_cast<float>(s * norm);
    }
  return out;
}

struct TrainPatch {
  int x0 = 0, y0 = 0, size = 0;
  friend bool operator==(const TrainPatch&, const TrainPatch&) = default;
};

inline std::vector<int> usable_scales(const std::vector<int>& scales, int height, int width) {
  std::vector<int> out;
  for (int s : scales)
    if (s > 0 && s <= height && s <= width) out.push_back(s);
  if (out.empty()) throw DataError("no crop scale fits a " + std::to_string(width) + "x" + std::to_string(height) + " image");
  return out;
}

/// Fraction of ink (1 - value) inside a crop of a [1,H,W] mask.
inline double ink_fraction(const Tensor& mask, const TrainPatch& p) {
  double s = 0;
  for (int y = p.y0; y < p.y0 + p.size; ++y)
    for (int x = p.x0; x < p.x0 + p.size; ++x) s += 1.0 - mask.at(0, y, x);
  return s / (static_cast<double>(p.size) * p.size);
}

/// Rejection-samples a crop (scale, then origin) whose ink fraction in
/// `ink_ref` reaches `min_ink`.
inline TrainPatch sample_patch(std::mt19937_64& rng, const Tensor& ink_ref, const std::vector<int>& scales,
                               double min_ink, int max_draws = 1000) {
  require_rank(ink_ref, 3, "sample_patch");
  const int H = ink_ref.dim(1), W = ink_ref.dim(2);
  const auto usable = usable_scales(scales, H, W);
  for (int draw = 0; draw < max_draws; ++draw) {
    const int s = usable[std::uniform_int_distribution<size_t>(0, usable.size() - 1)(rng)];
    TrainPatch p{std::uniform_int_distribution<int>(0, W - s)(rng), std::uniform_int_distribution<int>(0, H - s)(rng), s};
    if (ink_fraction(ink_ref, p) >= min_ink) return p;
  }
  throw DataError("sample_patch: no patch with ink fraction >= " + std::to_string(min_ink) + " after " +
                  std::to_string(max_draws) + " draws");
}

/// Curves with per-point frames and arc length precomputed on the full paths.
struct PreparedCurves {
  CurveSet curves;
  std::vector<Frames> frames;
  std::vector<std::vector<double>> arclength;

  explicit PreparedCurves(CurveSet c) : curves(std::move(c)) {
    for (const auto& p : curves.paths) {
      frames.push_back(nstrokes::frames(p));
      arclength.push_back(normalized_arclength(p));
    }
  }
};

/// Maximal run [begin, end) of a path's points within the crop grown by the
/// margin; in_crop flags the points strictly inside the crop itself.
struct CurvePiece {
  int path = 0;
  int begin = 0, end = 0;
  std::vector<std::uint8_t> in_crop;
  int size() const { return end - begin; }
};

inline std::vector<CurvePiece> clip_curves(const CurveSet& curves, const TrainPatch& p, double margin) {
  std::vector<CurvePiece> out;
  auto inside = [&](Vec2 q, double m) {
    return q.x >= p.x0 - m && q.x < p.x0 + p.size + m && q.y >= p.y0 - m && q.y < p.y0 + p.size + m;
  };
  for (size_t i = 0; i < curves.paths.size(); ++i) {
    const auto& pts = curves.paths[i].points;
    size_t j = 0;
    while (j < pts.size()) {
      if (!inside(pts[j], margin)) {
        ++j;
        continue;
      }
      CurvePiece piece;
      piece.path = static_cast<int>(i);
      piece.begin = static_cast<int>(j);
      while (j < pts.size() && inside(pts[j], margin)) piece.in_crop.push_back(inside(pts[j++], 0.0) ? 1 : 0);
      piece.end = static_cast<int>(j);
      out.push_back(std::move(piece));
    }
  }
  return out;
}

namespace ops {

/// Renders curve pieces with per-piece thickness [1,m] and displacement
/// [2,m] variables into the viewport; gradients flow through render_backward.
inline Var render_pieces(Tape& tape, const CurveSet& curves, const std::vector<CurvePiece>& pieces,
                         const std::vector<Var>& thickness, const std::vector<Var>& displacement, const Viewport& vp,
                         double aa) {
  StrokeSet s;
  std::vector<Var> inputs;
  for (size_t k = 0; k < pieces.size(); ++k) {
    const auto& pc = pieces[k];
    const int m = pc.size();
    const Tensor& tv = tape.value(thickness[k]);
    const Tensor& dv = tape.value(displacement[k]);
    if (static_cast<int>(tv.size()) != m || static_cast<int>(dv.size()) != 2 * m)
      throw ShapeError("render_pieces: piece " + std::to_string(k) + " variables do not match its point count");
    const auto& pts = curves.paths[static_cast<size_t>(pc.path)].points;
    Polyline poly;
    std::vector<double> th(static_cast<size_t>(m));
    std::vector<Vec2> d(static_cast<size_t>(m));
    for (int j = 0; j < m; ++j) {
      poly.points.push_back(pts[static_cast<size_t>(pc.begin + j)]);
      th[j] = tv[j];
      d[j] = {dv[j], dv[m + j]};
    }
    s.base.paths.push_back(std::move(poly));
    s.thickness.push_back(std::move(th));
    s.displacement.push_back(std::move(d));
    inputs.push_back(thickness[k]);
    inputs.push_back(displacement[k]);
  }
  if (pieces.empty()) return tape.constant(Tensor({1, vp.height, vp.width}, 1.0f));
  RenderResult r = render(s, vp, aa);
  Tensor image = std::move(r.image);
  return tape.record(std::move(image), inputs,
                     [s = std::move(s), rec = std::move(r.record), inputs](Tape& t, Var self) {
                       const StrokeGradient g = render_backward(s, rec, t.grad(self));
                       for (size_t k = 0; k < s.path_count(); ++k) {
                         const size_t m = s.thickness[k].size();
                         const Var tv = inputs[2 * k], dv = inputs[2 * k + 1];
                         if (t.needs_grad(tv)) {
                           auto& gt = t.grad(tv);
                           for (size_t j = 0; j < m; ++j) gt[j] += static_cast<float>(g.thickness[k][j]);
                         }
                         if (t.needs_grad(dv)) {
                           auto& gd = t.grad(dv);
                           for (size_t j = 0; j < m; ++j) {
                             gd[j] += static_cast<float>(g.displacement[k][j].x);
                             gd[m + j] += static_cast<float>(g.displacement[k][j].y);
                           }
                         }
                       }
                     });
}

/// Shape regularizer: for each path with at least one pair of consecutive
/// in-crop points, the mean of |d_j - d_{j+1}|^2 over those pairs; averaged
/// over such paths. Zero when no path qualifies.
inline Var loss_shape_reg(Tape& tape, const std::vector<CurvePiece>& pieces, const std::vector<Var>& displacement) {
  struct Pair {
    size_t piece;
    int j;
  };
  std::map<int, std::vector<Pair>> by_path;
  for (size_t k = 0; k < pieces.size(); ++k)
    for (int j = 0; j + 1 < pieces[k].size(); ++j)
      if (pieces[k].in_crop[j] && pieces[k].in_crop[j + 1]) by_path[pieces[k].path].push_back({k, j});
  if (by_path.empty()) return tape.constant(Tensor({1}, 0.0f));
  double total = 0;
  for (const auto& [path, pairs] : by_path) {
    double s = 0;
    for (const Pair& p : pairs) {
      const Tensor& d = tape.value(displacement[p.piece]);
      const int m = pieces[p.piece].size();
      const double dx = d[p.j] - d[p.j + 1], dy = d[m + p.j] - d[m + p.j + 1];
      s += dx * dx + dy * dy;
    }
    total += s / static_cast<double>(pairs.size());
  }
  const double npaths = static_cast<double>(by_path.size());
  std::vector<int> sizes;
  for (const auto& pc : pieces) sizes.push_back(pc.size());
  return tape.record(Tensor({1}, static_cast<float>(total / npaths)), displacement,
                     [by_path = std::move(by_path), displacement, sizes, npaths](Tape& t, Var self) {
                       const double gy = t.grad(self)[0];
                       for (const auto& [path, pairs] : by_path) {
                         const double k = 2.0 * gy / (npaths * static_cast<double>(pairs.size()));
                         for (const Pair& p : pairs) {
                           const Var v = displacement[p.piece];
                           if (!t.needs_grad(v)) continue;
                           const Tensor& d = t.value(v);
                           auto& g = t.grad(v);
                           const int m = sizes[p.piece];
                           for (int row = 0; row < 2; ++row) {
                             const int a = row * m + p.j;
                             const float diff = static_cast<float>(k * (d[a] - d[a + 1]));
                             g[a] += diff;
                             g[a + 1] -= diff;
                           }
                         }
                       }
                     });
}

/// L_b: L1 between a rendered crop and the soft-mask crop, both [1,c,c].
inline Var loss_mask(Tape& tape, Var rendered, const Tensor& mask, Reduction red = Reduction::mean) {
  if (tape.value(rendered).rank() != 3 || tape.value(rendered).dim(0) != 1)
    throw ShapeError("loss_mask: expected a [1,c,c] crop, got " + shape_str(tape.value(rendered).shape()));
  return l1_loss(tape, rendered, mask, red);
}

/// L_t: RGB L1 between a generated crop and the drawing crop, both [3,c,c].
inline Var loss_texture(Tape& tape, Var image, const Tensor& target, Reduction red = Reduction::mean) {
  if (tape.value(image).rank() != 3 || tape.value(image).dim(0) != 3)
    throw ShapeError("loss_texture: expected a [3,c,c] crop, got " + shape_str(tape.value(image).shape()));
  return l1_loss(tape, image, target, red);
}

/// Generator LSGAN term: mean (s - 1)^2.
inline Var loss_adversarial(Tape& tape, Var fake_scores) { return mean_squared_to(tape, fake_scores, 1.0f); }

/// Discriminator LSGAN loss: 0.5 * (mean (s_real - 1)^2 + mean s_fake^2).
inline Var disc_loss(Tape& tape, Var real_scores, Var fake_scores) {
  return weighted_sum(tape, {{0.5f, mean_squared_to(tape, real_scores, 1.0f)}, {0.5f, mean_squared_to(tape, fake_scores, 0.0f)}});
}

}  // namespace ops

/// Independent stream per (seed, stage, iteration) so a resumed run replays
/// exactly the draws of an uninterrupted one.
inline std::mt19937_64 iteration_rng(std::uint64_t seed, int stage, int iteration) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stage), static_cast<std::uint32_t>(iteration)};
  return std::mt19937_64(seq);
}

struct GeometryInputs {
  Tensor V;         // [9,H,W]
  CurveSet curves;  // resampled base curves
  Tensor mask;      // soft mask [1,H,W]
};

/// Forward pass of the geometry stage on one crop.
struct PatchGeometry {
  std::vector<CurvePiece> pieces;
  std::vector<Var> thickness;
  std::vector<Var> displacement;
  Var rendered;  // [1,c,c]
};

inline PatchGeometry patch_geometry(Binder& bind, const PreparedCurves& pc, const Tensor& V, const TrainPatch& patch,
                                    const TrainConfig& cfg) {
  Tape& t = bind.tape();
  const int c = patch.size;
  Var F = surface_forward(bind, t.constant(crop(V, patch.x0, patch.y0, c, c)));
  PatchGeometry g;
  g.pieces = clip_curves(pc.curves, patch, cfg.margin);
  for (const auto& piece : g.pieces) {
    const auto& pts = pc.curves.paths[static_cast<size_t>(piece.path)].points;
    std::vector<int> idx;
    for (int j = piece.begin; j < piece.end; ++j) idx.push_back(nearest_pixel(pts[static_cast<size_t>(j)], c, c, patch.x0, patch.y0));
    Var deep = ops::gather_pixels(t, F, std::move(idx));
    const auto& fr = pc.frames[static_cast<size_t>(piece.path)];
    const auto& s = pc.arclength[static_cast<size_t>(piece.path)];
    Var P = ops::concat_rows(t, deep, t.constant(curve_feature_rows(fr, s, piece.begin, piece.end, false)));
    Var Pf = ops::concat_rows(t, deep, t.constant(curve_feature_rows(fr, s, piece.begin, piece.end, true)));
    PathPrediction pred = path_forward(bind, P, Pf, static_cast<float>(cfg.base_thickness));
    g.thickness.push_back(pred.thickness);
    g.displacement.push_back(pred.displacement);
  }
  g.rendered = ops::render_pieces(t, pc.curves, g.pieces, g.thickness, g.displacement, Viewport{patch.x0, patch.y0, c, c},
                                  cfg.aa_width);
  return g;
}

struct GeometryLossRow {
  int iteration;
  double L_b, L_s, total;
};

struct TextureLossRow {
  int iteration;
  double L_t, L_a, L_D, total;
};

using IterationHook = std::function<void(int completed_iterations)>;

namespace detail {

template <class Fn>
auto with_iteration_context(int it, Fn&& fn) {
  try {
    return fn();
  } catch (const NumericalError& e) {
    throw NumericalError("iteration " + std::to_string(it) + ": " + e.what());
  }
}

}  // namespace detail

/// Geometry stage: iterations [begin, end) of lambda_b L_b + lambda_s L_s on
/// surface/ and path/, gradients averaged over cfg.batch patches.
inline std::vector<GeometryLossRow> train_geometry(ParamStore& params, const GeometryInputs& in, const TrainConfig& cfg,
                                                   int begin, int end, const IterationHook& hook = {}) {
  detail::require_divisible(in.V, kSurfaceChannels, "train_geometry");
  require_rank(in.mask, 3, "train_geometry mask");
  if (in.mask.dim(1) != in.V.dim(1) || in.mask.dim(2) != in.V.dim(2))
    throw ShapeError("train_geometry: mask and feature stack sizes differ");
  if (cfg.batch < 1) throw DataError("train_geometry: batch must be positive");
  const PreparedCurves pc(in.curves);
  params.set_lr("surface/", cfg.lr);
  params.set_lr("path/", cfg.lr);
  std::vector<GeometryLossRow> curve;
  for (int it = begin; it < end; ++it) {
    detail::with_iteration_context(it, [&] {
      auto rng = iteration_rng(cfg.seed, 1, it);
      params.zero_grad("surface/");
      params.zero_grad("path/");
      GeometryLossRow row{it, 0, 0, 0};
      for (int b = 0; b < cfg.batch; ++b) {
        const TrainPatch patch = sample_patch(rng, in.mask, cfg.scales, cfg.min_ink, cfg.max_draws);
        Tape tape;
        Binder bind(tape, params, true);
        const PatchGeometry g = patch_geometry(bind, pc, in.V, patch, cfg);
        Var Lb = ops::loss_mask(tape, g.rendered, crop(in.mask, patch.x0, patch.y0, patch.size, patch.size), cfg.reduction);
        Var Ls = ops::loss_shape_reg(tape, g.pieces, g.displacement);
        Var total = ops::weighted_sum(tape, {{static_cast<float>(cfg.weights.b), Lb}, {static_cast<float>(cfg.weights.s), Ls}});
        row.L_b += tape.value(Lb)[0] / cfg.batch;
        row.L_s += tape.value(Ls)[0] / cfg.batch;
        row.total += tape.value(total)[0] / cfg.batch;
        tape.backward(total, 1.0f / static_cast<float>(cfg.batch));
      }
      params.adam_step("surface/");
      params.adam_step("path/");
      curve.push_back(row);
    });
    if (hook) hook(it + 1);
  }
  return curve;
}

struct TextureInputs {
  Tensor V;         // [9,H,W]
  Tensor rendered;  // I_b from the geometry stage [1,H,W]
  Tensor target;    // artist drawing [3,H,W]
  Tensor mask;      // soft mask of the drawing [1,H,W], used to pick inked crops
};

/// Texture stage: iterations [begin, end). Each iteration first updates D on
/// real crops against fakes from the current generator, then updates the
/// generator on lambda_t L_t + lambda_a L_a against the updated D. Both steps
/// use the same fake-crop windows.
inline std::vector<TextureLossRow> train_texture(ParamStore& params, const TextureInputs& in, const TrainConfig& cfg,
                                                 int begin, int end, const IterationHook& hook = {}) {
  detail::require_divisible(in.V, kSurfaceChannels, "train_texture");
  const int H = in.V.dim(1), W = in.V.dim(2);
  for (const Tensor* t : {&in.rendered, &in.target, &in.mask})
    if (t->rank() != 3 || t->dim(1) != H || t->dim(2) != W) throw ShapeError("train_texture: input sizes differ");
  if (in.target.dim(0) != kRgbChannels) throw ShapeError("train_texture: target must be RGB");
  if (cfg.batch < 1) throw DataError("train_texture: batch must be positive");
  const bool adversarial = cfg.weights.a > 0.0;
  const Tensor U = texture_input(in.V, in.rendered);
  params.set_lr("texture/", cfg.lr);
  params.set_lr("disc/", cfg.lr);
  const float inv_batch = 1.0f / static_cast<float>(cfg.batch);
  std::vector<TextureLossRow> curve;
  for (int it = begin; it < end; ++it) {
    detail::with_iteration_context(it, [&] {
      auto rng = iteration_rng(cfg.seed, 2, it);
      std::vector<TrainPatch> fakes, reals;
      for (int b = 0; b < cfg.batch; ++b) {
        fakes.push_back(sample_patch(rng, in.mask, cfg.scales, cfg.min_ink, cfg.max_draws));
        reals.push_back(sample_patch(rng, in.mask, cfg.scales, cfg.min_ink, cfg.max_draws));
      }
      TextureLossRow row{it, 0, 0, 0, 0};
      if (adversarial) {
        params.zero_grad("disc/");
        for (int b = 0; b < cfg.batch; ++b) {
          const TrainPatch& fp = fakes[static_cast<size_t>(b)];
          const TrainPatch& rp = reals[static_cast<size_t>(b)];
          Tape tape;
          Binder gen(tape, params, false), disc(tape, params, true);
          Var fake = texture_forward(gen, tape.constant(crop(U, fp.x0, fp.y0, fp.size, fp.size)));
          Var real = discriminator_forward(disc, tape.constant(crop(in.target, rp.x0, rp.y0, rp.size, rp.size)));
          Var LD = ops::disc_loss(tape, real, discriminator_forward(disc, fake));
          row.L_D += tape.value(LD)[0] / cfg.batch;
          tape.backward(LD, inv_batch);
        }
        params.adam_step("disc/");
      }
      params.zero_grad("texture/");
      for (const TrainPatch& fp : fakes) {
        Tape tape;
        Binder gen(tape, params, true), disc(tape, params, false);
        Var I = texture_forward(gen, tape.constant(crop(U, fp.x0, fp.y0, fp.size, fp.size)));
        Var Lt = ops::loss_texture(tape, I, crop(in.target, fp.x0, fp.y0, fp.size, fp.size), cfg.reduction);
        std::vector<std::pair<float, Var>> terms{{static_cast<float>(cfg.weights.t), Lt}};
        if (adversarial) {
          Var La = ops::loss_adversarial(tape, discriminator_forward(disc, I));
          terms.push_back({static_cast<float>(cfg.weights.a), La});
          row.L_a += tape.value(La)[0] / cfg.batch;
        }
        Var total = ops::weighted_sum(tape, terms);
        row.L_t += tape.value(Lt)[0] / cfg.batch;
        row.total += tape.value(total)[0] / cfg.batch;
        tape.backward(total, inv_batch);
      }
      params.adam_step("texture/");
      curve.push_back(row);
    });
    if (hook) hook(it + 1);
  }
  return curve;
}

inline void write_loss_csv(std::ostream& os, const std::vector<GeometryLossRow>& rows, bool header = true) {
  if (header) os << "iteration,L_b,L_s,total\n";
  for (const auto& r : rows) os << r.iteration << ',' << r.L_b << ',' << r.L_s << ',' << r.total << '\n';
}

inline void write_loss_csv(std::ostream& os, const std::vector<TextureLossRow>& rows, bool header = true) {
  if (header) os << "iteration,L_t,L_a,L_D,total\n";
  for (const auto& r : rows) os << r.iteration << ',' << r.L_t << ',' << r.L_a << ',' << r.L_D << ',' << r.total << '\n';
}

}  // namespace nstrokes
