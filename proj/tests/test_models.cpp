#include <gtest/gtest.h>

#include <random>

#include "nstrokes/models.hpp"

using namespace nstrokes;

namespace {

// Architecture rows transcribed independently: kernel, in, out, stride
// (0 marks a stride-1/2 up-convolution), activation size at 768 input.
struct Row {
  int kernel, in, out, stride, size;
};

const std::vector<Row> kSurfaceTable = {
    {7, 9, 10, 1, 768},   {3, 10, 20, 2, 384}, {3, 20, 40, 2, 192},  {3, 40, 40, 1, 192}, {3, 40, 40, 1, 192},
    {3, 40, 40, 1, 192},  {3, 40, 40, 1, 192}, {3, 40, 40, 0, 384},  {3, 40, 40, 0, 768}, {1, 40, 40, 1, 768},
};
const std::vector<Row> kTextureTable = {
    {7, 9, 64, 1, 768},     {3, 64, 128, 2, 384},   {3, 128, 256, 2, 192},  {3, 256, 256, 1, 192},
    {3, 256, 256, 1, 192},  {3, 256, 256, 1, 192},  {3, 256, 256, 1, 192},  {3, 256, 256, 1, 192},
    {3, 256, 256, 1, 192},  {3, 256, 128, 0, 384},  {3, 128, 64, 0, 768},   {7, 64, 3, 1, 768},
};

void expect_table(const std::vector<LayerSpec>& specs, const std::vector<Row>& rows, int input) {
  ASSERT_EQ(specs.size(), rows.size());
  const auto shapes = stack_shapes(specs, specs.front().in, input, input);
  for (size_t i = 0; i < rows.size(); ++i) {
    SCOPED_TRACE(specs[i].name);
    EXPECT_EQ(specs[i].kernel, rows[i].kernel);
    EXPECT_EQ(specs[i].in, rows[i].in);
    EXPECT_EQ(specs[i].out, rows[i].out);
    if (rows[i].stride == 0)
      EXPECT_EQ(specs[i].kind, LayerKind::up);
    else
      EXPECT_EQ(specs[i].stride, rows[i].stride);
    EXPECT_EQ(shapes[i].channels, rows[i].out);
    EXPECT_EQ(shapes[i].height, rows[i].size * input / 768);
    EXPECT_EQ(shapes[i].width, rows[i].size * input / 768);
  }
}

// Scalar count implied by a table: each conv has weight + bias, plus
// gamma/beta when normalized; residual blocks hold two normalized 3x3 convs.
size_t expected_count(const std::vector<Row>& rows, bool last_norm) {
  size_t n = 0;
  for (size_t i = 0; i < rows.size(); ++i) {
    const Row& r = rows[i];
    const bool residual = r.in == r.out && r.stride == 1 && r.kernel == 3;
    const bool norm = i + 1 < rows.size() || last_norm;
    if (residual) {
      n += 2 * (static_cast<size_t>(r.out) * r.in * 9 + 3 * r.out);
    } else {
      n += static_cast<size_t>(r.out) * r.in * r.kernel * r.kernel + r.out + (norm ? 2 * r.out : 0);
    }
  }
  return n;
}

Tensor random(Shape s, std::uint64_t seed, float lo = -1.0f, float hi = 1.0f) {
  Tensor t(std::move(s));
  std::mt19937_64 rng(seed);
  fill_uniform(t, rng, lo, hi);
  return t;
}

}  // namespace

TEST(Census, SurfaceTableAt768And64) {
  // The table rows list residual blocks once; expand to one row per block.
  expect_table(surface_layers(), kSurfaceTable, 768);
  expect_table(surface_layers(), kSurfaceTable, 64);
}

TEST(Census, TextureTableAt768And64) {
  expect_table(texture_layers(), kTextureTable, 768);
  expect_table(texture_layers(), kTextureTable, 64);
  EXPECT_EQ(texture_layers().back().post, Post::sigmoid);
  EXPECT_FALSE(texture_layers().back().norm);
}

TEST(Census, PathTable) {
  const auto l = path_layers();
  ASSERT_EQ(l.size(), 3u);
  const int io[3][2] = {{45, 40}, {40, 40}, {40, 3}};
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(l[i].kind, LayerKind::conv1d);
    EXPECT_EQ(l[i].kernel, 3);
    EXPECT_EQ(l[i].in, io[i][0]);
    EXPECT_EQ(l[i].out, io[i][1]);
  }
  EXPECT_EQ(l[2].post, Post::none);
}

TEST(Census, DiscriminatorShapes) {
  const auto s = stack_shapes(discriminator_layers(), 3, 256, 256);
  const int expected[5][2] = {{64, 128}, {128, 64}, {256, 32}, {512, 31}, {1, 30}};
  for (int i = 0; i < 5; ++i) {
    EXPECT_EQ(s[i].channels, expected[i][0]);
    EXPECT_EQ(s[i].height, expected[i][1]);
  }
}

TEST(Census, ParameterStoreMatchesTables) {
  ParamStore p = make_params({.seed = 3});
  EXPECT_EQ(p.scalar_count("surface/"), expected_count(kSurfaceTable, true));
  EXPECT_EQ(p.scalar_count("texture/"), expected_count(kTextureTable, false));
  EXPECT_EQ(p.scalar_count("path/"), size_t{45 * 40 * 3 + 40 + 40 * 40 * 3 + 40 + 40 * 3 * 3 + 3});
  for (const auto& [prefix, specs] : {std::pair{std::string("surface"), surface_layers()},
                                      std::pair{std::string("path"), path_layers()},
                                      std::pair{std::string("texture"), texture_layers()},
                                      std::pair{std::string("disc"), discriminator_layers()}})
    for (const auto& ps : stack_param_shapes(prefix, specs)) EXPECT_EQ(p.get(ps.name).shape(), ps.shape) << ps.name;
  EXPECT_EQ(p.get("surface/u0/weight").shape(), (Shape{40, 40, 3, 3}));
  EXPECT_EQ(p.get("texture/u0/weight").shape(), (Shape{256, 128, 3, 3}));
  EXPECT_EQ(p.get("surface/res2/b/gamma").shape(), (Shape{40}));
}

TEST(Params, InitIsDeterministicAndSeeded) {
  ParamStore a = make_params({.seed = 5}), b = make_params({.seed = 5}), c = make_params({.seed = 6});
  EXPECT_TRUE(a == b);
  EXPECT_FALSE(a.get("surface/c0/weight") == c.get("surface/c0/weight"));
  for (float v : a.get("path/c2/weight").values()) EXPECT_EQ(v, 0.0f);
  for (float v : a.get("surface/c0/gamma").values()) EXPECT_EQ(v, 1.0f);
}

TEST(Surface, FullyConvolutionalShapes) {
  ParamStore p = make_params({.seed = 1});
  for (int s : {64, 128}) {
    Tensor F = surface_features(p, random({9, s, s}, s));
    EXPECT_EQ(F.shape(), (Shape{40, s, s}));
  }
  Tensor F = surface_features(p, random({9, 64, 96}, 7));
  EXPECT_EQ(F.shape(), (Shape{40, 64, 96}));
}

TEST(Surface, RejectsIndivisibleOrWrongChannels) {
  ParamStore p = make_params();
  EXPECT_THROW(surface_features(p, Tensor({9, 66, 64})), ShapeError);
  EXPECT_THROW(surface_features(p, Tensor({8, 64, 64})), ShapeError);
}

TEST(Surface, ZeroInputGradientFlow) {
  ParamStore p = make_params({.seed = 2, .zero_init_surface_output = true});
  p.zero_grad("surface/");
  Tape t;
  Binder bind(t, p, true);
  Var F = surface_forward(bind, t.constant(Tensor({9, 64, 64}, 0.0f)));
  EXPECT_TRUE(t.value(F).all_finite());
  Var loss = ops::mean_squared_to(t, F, 1.0f);
  t.backward(loss);
  p.for_prefix("surface/", [](const std::string& name, Parameter& q) {
    EXPECT_TRUE(q.value.has_grad()) << name;
    EXPECT_EQ(q.value.grad().size(), q.value.size()) << name;
    for (float g : q.value.grad()) EXPECT_TRUE(std::isfinite(g)) << name;
  });
}

TEST(Path, ShapesAndNonNegativeThickness) {
  ParamStore p = make_params({.seed = 3, .zero_init_path_output = false});
  Tape t;
  Binder bind(t, p, false);
  Tensor P = random({45, 17}, 1);
  Var raw = detail::run_stack(bind, "path", path_layers(), t.constant(P));
  EXPECT_EQ(t.value(raw).shape(), (Shape{3, 17}));
  Tensor Pf = P;
  for (int c = 40; c < 44; ++c)
    for (int j = 0; j < 17; ++j) Pf[c * 17 + j] = -Pf[c * 17 + j];
  PathPrediction pred = path_forward(bind, t.constant(P), t.constant(Pf), 0.0f);
  EXPECT_EQ(t.value(pred.thickness).shape(), (Shape{1, 17}));
  EXPECT_EQ(t.value(pred.displacement).shape(), (Shape{2, 17}));
  for (float v : t.value(pred.thickness).values()) EXPECT_GE(v, 0.0f);
  EXPECT_THROW(path_forward(bind, t.constant(Tensor({44, 5})), t.constant(Tensor({44, 5})), 0.0f), ShapeError);
}

TEST(Path, IdenticalInputsEqualSingleEvaluation) {
  ParamStore p = make_params({.seed = 4, .zero_init_path_output = false});
  Tape t;
  Binder bind(t, p, false);
  Tensor P = random({45, 9}, 2);
  for (int c = 40; c < 44; ++c)
    for (int j = 0; j < 9; ++j) P[c * 9 + j] = 0.0f;
  Tensor single = t.value(path_network(bind, t.constant(P), 1.0f));
  PathPrediction pred = path_forward(bind, t.constant(P), t.constant(P), 1.0f);
  for (int j = 0; j < 9; ++j) {
    EXPECT_EQ(t.value(pred.thickness)[j], single[j]);
    EXPECT_EQ(t.value(pred.displacement)[j], single[9 + j]);
    EXPECT_EQ(t.value(pred.displacement)[9 + j], single[18 + j]);
  }
}

TEST(Path, OrientationSignInvariance) {
  ParamStore p = make_params({.seed = 5, .zero_init_path_output = false});
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    const int m = 3 + trial * 4;
    Tensor P = random({45, m}, 100 + trial), Pf = P;
    for (int c = 40; c < 44; ++c)
      for (int j = 0; j < m; ++j) Pf[c * m + j] = -P[c * m + j];
    Tape t;
    Binder bind(t, p, false);
    PathPrediction a = path_forward(bind, t.constant(P), t.constant(Pf), 1.0f);
    PathPrediction b = path_forward(bind, t.constant(Pf), t.constant(P), 1.0f);
    EXPECT_EQ(t.value(a.thickness), t.value(b.thickness));
    EXPECT_EQ(t.value(a.displacement), t.value(b.displacement));
  }
}

TEST(Texture, ShapeAndSigmoidRange) {
  ParamStore p = make_params({.seed = 6});
  for (int s : {64, 128}) {
    Tensor I = texture_image(p, random({9, s, s}, 3 + s, 0.0f, 1.0f));
    ASSERT_EQ(I.shape(), (Shape{3, s, s}));
    EXPECT_GT(*std::min_element(I.values().begin(), I.values().end()), 0.0f);
    EXPECT_LT(*std::max_element(I.values().begin(), I.values().end()), 1.0f);
  }
  EXPECT_THROW(texture_image(p, Tensor({9, 62, 64})), ShapeError);
}

TEST(Discriminator, PatchShapesAndGradients) {
  ParamStore p = make_params({.seed = 7});
  {
    Tape t;
    Binder bind(t, p, false);
    EXPECT_EQ(t.value(discriminator_forward(bind, t.constant(random({3, 256, 256}, 4)))).shape(), (Shape{1, 30, 30}));
    EXPECT_EQ(t.value(discriminator_forward(bind, t.constant(random({3, 64, 64}, 5)))).shape(), (Shape{1, 6, 6}));
    EXPECT_THROW(discriminator_forward(bind, t.constant(Tensor({3, 60, 64}))), ShapeError);
  }
  p.zero_grad("disc/");
  Tape t;
  Binder bind(t, p, true);
  Var s = discriminator_forward(bind, t.constant(Tensor({3, 64, 64}, 0.5f)));
  EXPECT_TRUE(t.value(s).all_finite());
  t.backward(ops::mean_squared_to(t, s, 1.0f));
  p.for_prefix("disc/", [](const std::string& name, Parameter& q) {
    bool any = false;
    for (float g : q.value.grad()) {
      EXPECT_TRUE(std::isfinite(g));
      any |= g != 0.0f;
    }
    EXPECT_TRUE(any) << name;
    EXPECT_TRUE(q.value.has_grad()) << name;
  });
}

TEST(Infer, ZeroInitGivesIdentityStylization) {
  ParamStore p = make_params({.seed = 8});
  CurveSet curves{{Polyline{{{10, 10}, {50, 30}, {60, 60}}}, Polyline{{{5, 40}, {30, 45}}}}};
  curves = resample_uniform(curves, 1.0);
  Tensor V = random({9, 64, 64}, 11, 0.0f, 1.0f);
  InferResult r = infer(p, curves, V, {.base_thickness = 0.0, .run_texture = false});
  EXPECT_EQ(apply_displacement(r.strokes), curves);
  for (const auto& th : r.strokes.thickness)
    for (double v : th) EXPECT_EQ(v, 0.0);
  double mean = 0;
  for (float v : r.rendered.values()) mean += v;
  EXPECT_GT(mean / r.rendered.size(), 0.95);
}

TEST(Infer, StageShapesAt256) {
  ParamStore p = make_params({.seed = 9});
  CurveSet curves = resample_uniform(CurveSet{{Polyline{{{20, 20}, {200, 180}}}}}, 2.0);
  InferResult r = infer(p, curves, random({9, 256, 256}, 12, 0.0f, 1.0f));
  EXPECT_EQ(r.rendered.shape(), (Shape{1, 256, 256}));
  EXPECT_EQ(r.drawing.shape(), (Shape{3, 256, 256}));
  for (const auto& th : r.strokes.thickness)
    for (double v : th) EXPECT_EQ(v, 1.0);  // base thickness with a zero path head
}
