#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "nstrokes/curves.hpp"
#include "nstrokes/ops.hpp"
#include "nstrokes/params.hpp"
#include "nstrokes/rasterizer.hpp"

namespace nstrokes {

inline constexpr int kSurfaceChannels = 9;   // V: 8 geometry/shading channels + curve raster
inline constexpr int kGeometryChannels = 8;  // first eight channels of V
inline constexpr int kTextureInputChannels = 9;
inline constexpr int kRgbChannels = 3;

enum class LayerKind { conv, up, residual, conv1d };
enum class Post { none, relu, leaky, sigmoid };

/// One row of an architecture table. `up` is a stride-2 transposed
/// convolution that doubles the spatial size; `residual` is two 3x3
/// convolutions of `out` channels with an additive skip.
struct LayerSpec {
  std::string name;
  LayerKind kind;
  int kernel;
  int in;
  int out;
  int stride = 1;
  int pad = -1;  // -1: (kernel - 1) / 2
  bool norm = true;
  Post post = Post::relu;
};

inline std::vector<LayerSpec> surface_layers() {
  return {
      {"c0", LayerKind::conv, 7, 9, 10, 1},      {"c1", LayerKind::conv, 3, 10, 20, 2},
      {"c2", LayerKind::conv, 3, 20, 40, 2},     {"res0", LayerKind::residual, 3, 40, 40},
      {"res1", LayerKind::residual, 3, 40, 40},  {"res2", LayerKind::residual, 3, 40, 40},
      {"res3", LayerKind::residual, 3, 40, 40},  {"u0", LayerKind::up, 3, 40, 40, 2},
      {"u1", LayerKind::up, 3, 40, 40, 2},       {"out", LayerKind::conv, 1, 40, 40, 1},
  };
}

inline std::vector<LayerSpec> path_layers() {
  return {
      {"c0", LayerKind::conv1d, 3, 45, 40, 1, 1, false, Post::relu},
      {"c1", LayerKind::conv1d, 3, 40, 40, 1, 1, false, Post::relu},
      {"c2", LayerKind::conv1d, 3, 40, 3, 1, 1, false, Post::none},
  };
}

inline std::vector<LayerSpec> texture_layers() {
  std::vector<LayerSpec> l = {
      {"c0", LayerKind::conv, 7, 9, 64, 1},
      {"c1", LayerKind::conv, 3, 64, 128, 2},
      {"c2", LayerKind::conv, 3, 128, 256, 2},
  };
  for (int i = 0; i < 6; ++i) l.push_back({"res" + std::to_string(i), LayerKind::residual, 3, 256, 256});
  l.push_back({"u0", LayerKind::up, 3, 256, 128, 2});
  l.push_back({"u1", LayerKind::up, 3, 128, 64, 2});
  l.push_back({"out", LayerKind::conv, 7, 64, 3, 1, -1, false, Post::sigmoid});
  return l;
}

/// 70x70 PatchGAN: 4x4 kernels, padding 1, leaky ReLU 0.2.
inline std::vector<LayerSpec> discriminator_layers() {
  return {
      {"c0", LayerKind::conv, 4, 3, 64, 2, 1, false, Post::leaky},
      {"c1", LayerKind::conv, 4, 64, 128, 2, 1, true, Post::leaky},
      {"c2", LayerKind::conv, 4, 128, 256, 2, 1, true, Post::leaky},
      {"c3", LayerKind::conv, 4, 256, 512, 1, 1, true, Post::leaky},
      {"out", LayerKind::conv, 4, 512, 1, 1, 1, false, Post::none},
  };
}

struct ActivationShape {
  std::string layer;
  int channels, height, width;
  friend bool operator==(const ActivationShape&, const ActivationShape&) = default;
};

/// Activation size after each layer, by shape arithmetic only.
inline std::vector<ActivationShape> stack_shapes(const std::vector<LayerSpec>& specs, int c, int h, int w) {
  std::vector<ActivationShape> out;
  for (const auto& s : specs) {
    if (s.in != c) throw ShapeError("layer " + s.name + " expects " + std::to_string(s.in) + " channels");
    const int pad = s.pad < 0 ? (s.kernel - 1) / 2 : s.pad;
    switch (s.kind) {
      case LayerKind::conv:
        h = (h + 2 * pad - s.kernel) / s.stride + 1;
        w = (w + 2 * pad - s.kernel) / s.stride + 1;
        break;
      case LayerKind::up:
        h *= 2;
        w *= 2;
        break;
      case LayerKind::residual:
      case LayerKind::conv1d:
        break;
    }
    c = s.out;
    out.push_back({s.name, c, h, w});
  }
  return out;
}

struct ParamShape {
  std::string name;
  Shape shape;
};

/// Parameter names and shapes created for a layer table, in creation order.
inline std::vector<ParamShape> stack_param_shapes(const std::string& prefix, const std::vector<LayerSpec>& specs) {
  std::vector<ParamShape> out;
  auto conv = [&](const std::string& base, Shape w, int ch, bool norm) {
    out.push_back({base + "/weight", std::move(w)});
    out.push_back({base + "/bias", {ch}});
    if (norm) {
      out.push_back({base + "/gamma", {ch}});
      out.push_back({base + "/beta", {ch}});
    }
  };
  for (const auto& s : specs) {
    const std::string base = prefix + "/" + s.name;
    switch (s.kind) {
      case LayerKind::conv:
        conv(base, {s.out, s.in, s.kernel, s.kernel}, s.out, s.norm);
        break;
      case LayerKind::up:
        conv(base, {s.in, s.out, s.kernel, s.kernel}, s.out, s.norm);
        break;
      case LayerKind::residual:
        conv(base + "/a", {s.out, s.out, 3, 3}, s.out, true);
        conv(base + "/b", {s.out, s.out, 3, 3}, s.out, true);
        break;
      case LayerKind::conv1d:
        conv(base, {s.out, s.in, s.kernel}, s.out, s.norm);
        break;
    }
  }
  return out;
}

struct ModelOptions {
  std::uint64_t seed = 0;
  AdamHyper adam;
  // Zero the last path-module layer so training starts from d = 0 and t = base thickness.
  bool zero_init_path_output = true;
  bool zero_init_surface_output = false;
};

namespace detail {

inline void init_stack(ParamStore& store, const std::string& prefix, const std::vector<LayerSpec>& specs,
                       std::uint64_t seed, const AdamHyper& hyper, bool zero_last) {
  std::seed_seq seq(prefix.begin(), prefix.end());
  std::vector<std::uint32_t> mix(2);
  seq.generate(mix.begin(), mix.end());
  std::mt19937_64 rng(seed ^ (static_cast<std::uint64_t>(mix[0]) << 32 | mix[1]));
  const std::string last = prefix + "/" + specs.back().name + "/";
  for (const auto& ps : stack_param_shapes(prefix, specs)) {
    Tensor t(ps.shape);
    const std::string kind = ps.name.substr(ps.name.rfind('/') + 1);
    const bool is_last = ps.name.compare(0, last.size(), last) == 0;
    if (kind == "weight" && !(zero_last && is_last)) fill_normal(t, rng, 0.0f, 0.02f);
    if (kind == "gamma") t.fill(1.0f);
    store.add(ps.name, std::move(t), hyper);
  }
}

inline Var apply_post(Tape& t, Var x, Post p) {
  switch (p) {
    case Post::relu: return ops::relu(t, x);
    case Post::leaky: return ops::leaky_relu(t, x, 0.2f);
    case Post::sigmoid: return ops::sigmoid(t, x);
    case Post::none: break;
  }
  return x;
}

inline Var normed(Binder& bind, const std::string& base, Var x, bool norm) {
  if (!norm) return x;
  return ops::instance_norm(bind.tape(), x, bind(base + "/gamma"), bind(base + "/beta"));
}

inline Var run_stack(Binder& bind, const std::string& prefix, const std::vector<LayerSpec>& specs, Var x) {
  Tape& t = bind.tape();
  for (const auto& s : specs) {
    const std::string base = prefix + "/" + s.name;
    switch (s.kind) {
      case LayerKind::conv:
        x = ops::conv2d(t, x, bind(base + "/weight"), bind(base + "/bias"), s.stride, s.pad);
        x = apply_post(t, normed(bind, base, x, s.norm), s.post);
        break;
      case LayerKind::up:
        x = ops::conv_transpose2d(t, x, bind(base + "/weight"), bind(base + "/bias"));
        x = apply_post(t, normed(bind, base, x, s.norm), s.post);
        break;
      case LayerKind::conv1d:
        x = ops::conv1d(t, x, bind(base + "/weight"), bind(base + "/bias"));
        x = apply_post(t, normed(bind, base, x, s.norm), s.post);
        break;
      case LayerKind::residual: {
        Var y = ops::conv2d(t, x, bind(base + "/a/weight"), bind(base + "/a/bias"), 1);
        y = ops::relu(t, normed(bind, base + "/a", y, true));
        y = ops::conv2d(t, y, bind(base + "/b/weight"), bind(base + "/b/bias"), 1);
        y = normed(bind, base + "/b", y, true);
        x = ops::relu(t, ops::add(t, x, y));
        break;
      }
    }
  }
  return x;
}

inline void require_divisible(const Tensor& x, int channels, const char* what) {
  require_rank(x, 3, what);
  if (x.dim(0) != channels)
    throw ShapeError(std::string(what) + ": expected " + std::to_string(channels) + " channels, got " +
                     shape_str(x.shape()));
  if (x.dim(1) % 4 != 0 || x.dim(2) % 4 != 0 || x.dim(1) < 4 || x.dim(2) < 4)
    throw ShapeError(std::string(what) + ": spatial dims must be positive multiples of 4, got " +
                     shape_str(x.shape()));
}

}  // namespace detail

/// Parameters of all four networks: surface/ (w1), path/ (w2), texture/ (w3), disc/ (wD).
inline ParamStore make_params(const ModelOptions& opt = {}) {
  ParamStore store;
  detail::init_stack(store, "surface", surface_layers(), opt.seed, opt.adam, opt.zero_init_surface_output);
  detail::init_stack(store, "path", path_layers(), opt.seed, opt.adam, opt.zero_init_path_output);
  detail::init_stack(store, "texture", texture_layers(), opt.seed, opt.adam, false);
  detail::init_stack(store, "disc", discriminator_layers(), opt.seed, opt.adam, false);
  return store;
}

/// f: V [9,H,W] -> F [40,H,W].
inline Var surface_forward(Binder& bind, Var V) {
  detail::require_divisible(bind.tape().value(V), kSurfaceChannels, "surface_forward");
  return detail::run_stack(bind, "surface", surface_layers(), V);
}

struct PathPrediction {
  Var thickness;     // [1, M]
  Var displacement;  // [2, M]
};

/// One evaluation of h on a [45, M] feature map -> [3, M] with the
/// thickness row already passed through relu(raw + base_thickness).
inline Var path_network(Binder& bind, Var features, float base_thickness) {
  Tape& t = bind.tape();
  const Tensor& fv = t.value(features);
  require_rank(fv, 2, "path_forward");
  if (fv.dim(0) != kPathFeatureChannels)
    throw ShapeError("path_forward: feature width must be 45, got " + shape_str(fv.shape()));
  if (fv.dim(1) < 1) throw ShapeError("path_forward: path needs at least one point");
  Var raw = detail::run_stack(bind, "path", path_layers(), features);
  Var th = ops::relu(t, ops::add_scalar(t, ops::slice_rows(t, raw, 0, 1), base_thickness));
  return ops::concat_rows(t, th, ops::slice_rows(t, raw, 1, 2));
}

/// [t, d] = avg(h(P), h(P')).
inline PathPrediction path_forward(Binder& bind, Var features, Var flipped, float base_thickness) {
  Tape& t = bind.tape();
  Var avg = ops::average(t, path_network(bind, features, base_thickness), path_network(bind, flipped, base_thickness));
  return {ops::slice_rows(t, avg, 0, 1), ops::slice_rows(t, avg, 1, 2)};
}

/// g: U [9,H,W] -> I [3,H,W] in (0,1).
inline Var texture_forward(Binder& bind, Var U) {
  detail::require_divisible(bind.tape().value(U), kTextureInputChannels, "texture_forward");
  return detail::run_stack(bind, "texture", texture_layers(), U);
}

/// D: RGB patch [3,c,c] -> score map [1,h',w'].
inline Var discriminator_forward(Binder& bind, Var patch) {
  const Tensor& pv = bind.tape().value(patch);
  require_rank(pv, 3, "discriminator_forward");
  if (pv.dim(0) != kRgbChannels) throw ShapeError("discriminator_forward: expected an RGB patch");
  if (pv.dim(1) < 64 || pv.dim(2) < 64)
    throw ShapeError("discriminator_forward: patch too small " + shape_str(pv.shape()));
  return detail::run_stack(bind, "disc", discriminator_layers(), patch);
}

struct InferOptions {
  double base_thickness = 1.0;
  double aa_width = 1.0;
  bool run_texture = true;
};

struct InferResult {
  StrokeSet strokes;
  Tensor rendered;  // I_b [1,H,W]
  Tensor drawing;   // I [3,H,W]
};

/// U = first eight channels of V stacked with the grayscale rendering.
inline Tensor texture_input(const Tensor& V, const Tensor& rendered) {
  return concat_channels(channels(V, 0, kGeometryChannels), rendered);
}

/// Per-path thickness and displacement for curves over a full feature map F.
inline StrokeSet predict_strokes(ParamStore& params, const CurveSet& curves, const Tensor& F, double base_thickness) {
  StrokeSet strokes;
  strokes.base = curves;
  for (const auto& path : curves.paths) {
    const PathFeatures pf = build_path_features(path, F);
    Tape tape;
    Binder bind(tape, params, false);
    const PathPrediction pred =
        path_forward(bind, tape.reference(pf.forward), tape.reference(pf.flipped), static_cast<float>(base_thickness));
    const Tensor& tv = tape.value(pred.thickness);
    const Tensor& dv = tape.value(pred.displacement);
    const size_t m = path.points.size();
    std::vector<double> th(m);
    std::vector<Vec2> d(m);
    for (size_t j = 0; j < m; ++j) {
      th[j] = tv[j];
      d[j] = {dv[j], dv[m + j]};
    }
    strokes.thickness.push_back(std::move(th));
    strokes.displacement.push_back(std::move(d));
  }
  return strokes;
}

inline Tensor surface_features(ParamStore& params, const Tensor& V) {
  Tape tape;
  Binder bind(tape, params, false);
  return tape.value(surface_forward(bind, tape.reference(V)));
}

inline Tensor texture_image(ParamStore& params, const Tensor& U) {
  Tape tape;
  Binder bind(tape, params, false);
  return tape.value(texture_forward(bind, tape.reference(U)));
}

/// Full pipeline: F = f(V); strokes from h per path; I_b = render; I = g(U).
inline InferResult infer(ParamStore& params, const CurveSet& curves, const Tensor& V, const InferOptions& opt = {}) {
  if (curves.paths.empty()) throw DataError("infer: empty curve set");
  const Tensor F = surface_features(params, V);
  InferResult r;
  r.strokes = predict_strokes(params, curves, F, opt.base_thickness);
  r.rendered = render(r.strokes, Viewport{0, 0, V.dim(2), V.dim(1)}, opt.aa_width).image;
  if (opt.run_texture) r.drawing = texture_image(params, texture_input(V, r.rendered));
  return r;
}

}  // namespace nstrokes
