#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "nstrokes/gradcheck.hpp"
#include "nstrokes/io.hpp"
#include "nstrokes/raster_check.hpp"
#include "nstrokes/synth.hpp"
#include "nstrokes/training.hpp"

namespace nstrokes::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

// ---------------------------------------------------------------- config file

/// key = value lines; '#' starts a comment; values may be double-quoted.
/// Keys are remembered with the line they came from for error messages.
class Config {
 public:
  static Config parse(const std::string& text, const std::string& what) {
    Config c;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const std::string where = what + ":" + std::to_string(lineno);
      bool quoted = false;
      for (size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '"') quoted = !quoted;
        if (line[i] == '#' && !quoted) {
          line.resize(i);
          break;
        }
      }
      const std::string body = trim(line);
      if (body.empty()) continue;
      const auto eq = body.find('=');
      if (eq == std::string::npos) throw UsageError(where + ": expected key = value");
      const std::string key = trim(body.substr(0, eq));
      std::string value = trim(body.substr(eq + 1));
      if (key.empty()) throw UsageError(where + ": empty key");
      if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
      if (c.values_.count(key)) throw UsageError(where + ": duplicate key '" + key + "'");
      c.values_[key] = {value, where};
    }
    return c;
  }

  static Config load(const fs::path& path) { return parse(io::read_file(path), path.string()); }

  void set(const std::string& key, const std::string& value) { values_[key] = {value, "command line"}; }
  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string str(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    used_[key] = true;
    return it->second.value;
  }

  double num(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    used_[key] = true;
    return to_double(it->second);
  }

  int integer(const std::string& key, int fallback) const {
    const double v = num(key, fallback);
    if (v != std::floor(v) || std::abs(v) > 1e9) throw UsageError(values_.at(key).where + ": '" + key + "' must be an integer");
    return static_cast<int>(v);
  }

  bool flag(const std::string& key, bool fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    used_[key] = true;
    const std::string& v = it->second.value;
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw UsageError(it->second.where + ": '" + key + "' must be true or false");
  }

  std::vector<double> list(const std::string& key, std::vector<double> fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    used_[key] = true;
    std::vector<double> out;
    std::string v = it->second.value;
    if (!v.empty() && v.front() == '[' && v.back() == ']') v = v.substr(1, v.size() - 2);
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(to_double({trim(item), it->second.where}));
    if (out.empty()) throw UsageError(it->second.where + ": '" + key + "' is an empty list");
    return out;
  }

  /// Rejects keys nobody asked for, so typos do not pass silently.
  void require_all_used() const {
    for (const auto& [k, v] : values_)
      if (!used_.count(k)) throw UsageError(v.where + ": unknown key '" + k + "'");
  }

 private:
  struct Entry {
    std::string value, where;
  };

  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
  }

  static double to_double(const Entry& e) {
    char* end = nullptr;
    const double v = std::strtod(e.value.c_str(), &end);
    if (e.value.empty() || *end != '\0' || !std::isfinite(v)) throw UsageError(e.where + ": not a number: '" + e.value + "'");
    return v;
  }

  std::map<std::string, Entry> values_;
  mutable std::map<std::string, bool> used_;
};

inline TrainConfig train_config(const Config& c, std::uint64_t seed) {
  TrainConfig t;
  t.seed = seed;
  t.lr = c.num("lr", t.lr);
  t.batch = c.integer("batch", t.batch);
  t.iterations = c.integer("iterations", t.iterations);
  t.min_ink = c.num("min_ink", t.min_ink);
  t.aa_width = c.num("aa_width", t.aa_width);
  t.spacing = c.num("spacing", t.spacing);
  t.margin = c.num("margin", t.margin);
  t.max_draws = c.integer("max_draws", t.max_draws);
  t.base_thickness = c.num("base_thickness", t.base_thickness);
  t.weights.b = c.num("lambda_b", t.weights.b);
  t.weights.s = c.num("lambda_s", t.weights.s);
  t.weights.t = c.num("lambda_t", t.weights.t);
  t.weights.a = c.num("lambda_a", t.weights.a);
  std::vector<double> sc(t.scales.begin(), t.scales.end());
  t.scales.clear();
  for (double v : c.list("scales", sc)) t.scales.push_back(static_cast<int>(v));
  const std::string red = c.str("reduction", "mean");
  if (red == "mean") t.reduction = ops::Reduction::mean;
  else if (red == "sum") t.reduction = ops::Reduction::sum;
  else throw UsageError("reduction must be mean or sum, got '" + red + "'");
  if (t.batch < 1 || t.iterations < 0 || t.lr <= 0 || t.aa_width <= 0 || t.margin < 0)
    throw UsageError("invalid training configuration");
  return t;
}

inline SynthStyle synth_style(const Config& c) {
  SynthStyle s;
  s.t0 = c.num("t0", s.t0);
  s.t1 = c.num("t1", s.t1);
  s.f = c.num("f", s.f);
  s.t2 = c.num("t2", s.t2);
  s.feature_channel = c.integer("feature_channel", s.feature_channel);
  s.A = c.num("A", s.A);
  s.g = c.num("g", s.g);
  s.gradient = c.flag("gradient", s.gradient);
  auto rgb = [&](const char* key, std::array<double, 3> fb) {
    auto v = c.list(key, {fb[0], fb[1], fb[2]});
    if (v.size() != 3) throw UsageError(std::string(key) + " needs three components");
    return std::array<double, 3>{v[0], v[1], v[2]};
  };
  s.ink = rgb("ink", s.ink);
  s.ink_end = rgb("ink_end", s.ink_end);
  try {
    s.validate();
  } catch (const DataError& e) {
    throw UsageError(e.what());
  }
  return s;
}

inline json echo(const TrainConfig& t) {
  return {{"lr", t.lr},
          {"batch", t.batch},
          {"seed", t.seed},
          {"min_ink", t.min_ink},
          {"aa_width", t.aa_width},
          {"spacing", t.spacing},
          {"margin", t.margin},
          {"scales", t.scales},
          {"max_draws", t.max_draws},
          {"base_thickness", t.base_thickness},
          {"lambda_b", t.weights.b},
          {"lambda_s", t.weights.s},
          {"lambda_t", t.weights.t},
          {"lambda_a", t.weights.a},
          {"reduction", t.reduction == ops::Reduction::mean ? "mean" : "sum"}};
}

// ---------------------------------------------------------------- evaluation

struct EvalMetrics {
  double mean_l1 = 0, rmse = 0, ink_l1 = 0;
  size_t ink_pixels = 0;
};

/// Ink pixels are those whose channel-mean value is below the threshold in
/// either image.
inline EvalMetrics eval_metrics(const Tensor& a, const Tensor& b, double ink_threshold = 0.5) {
  require_rank(a, 3, "eval");
  if (a.shape() != b.shape()) throw ShapeError("eval: image sizes differ: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const int C = a.dim(0), H = a.dim(1), W = a.dim(2);
  EvalMetrics m;
  double l1 = 0, l2 = 0, ink = 0;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double la = 0, lb = 0, e = 0;
      for (int c = 0; c < C; ++c) {
        const double d = static_cast<double>(a.at(c, y, x)) - b.at(c, y, x);
        la += a.at(c, y, x);
        lb += b.at(c, y, x);
        l1 += std::abs(d);
        l2 += d * d;
        e += std::abs(d);
      }
      if (la / C < ink_threshold || lb / C < ink_threshold) {
        ink += e / C;
        ++m.ink_pixels;
      }
    }
  const double n = static_cast<double>(a.size());
  m.mean_l1 = l1 / n;
  m.rmse = std::sqrt(l2 / n);
  m.ink_l1 = m.ink_pixels ? ink / static_cast<double>(m.ink_pixels) : 0.0;
  return m;
}

// ---------------------------------------------------------------- gradcheck

struct FamilyResult {
  std::string family;
  double max_rel_err;
  double threshold;
};

namespace detail {

// Uniform in +-[lo, hi], keeping every entry away from relu/l1 kinks at 0.
inline Tensor away_from_zero(Shape s, std::mt19937_64& rng, float lo = 0.1f, float hi = 1.0f) {
  Tensor t(std::move(s));
  std::uniform_real_distribution<float> mag(lo, hi);
  std::bernoulli_distribution neg(0.5);
  for (float& v : t.values()) v = neg(rng) ? -mag(rng) : mag(rng);
  return t;
}

inline double check(std::vector<Tensor>& inputs, const std::function<Var(Tape&, std::span<const Var>)>& f,
                    std::uint64_t seed) {
  std::vector<Tensor*> ptrs;
  for (auto& t : inputs) ptrs.push_back(&t);
  return gradcheck(f, ptrs, {.step = 1e-3, .max_coords = 64, .seed = seed});
}

inline Var smooth_scalar(Tape& t, Var y) { return ops::mean_squared_to(t, y, 0.3f); }

}  // namespace detail

/// Finite-difference check per op family on randomized small shapes.
inline std::vector<FamilyResult> run_gradchecks(std::uint64_t seed) {
  using detail::away_from_zero;
  using detail::check;
  using detail::smooth_scalar;
  std::mt19937_64 rng(seed);
  std::vector<FamilyResult> out;
  const double thr = 1e-2;
  auto worst = [](auto&& fn, int reps) {
    double w = 0;
    for (int r = 0; r < reps; ++r) w = std::max(w, fn(r));
    return w;
  };

  out.push_back({"conv2d", worst([&](int r) {
                   std::vector<Tensor> in{away_from_zero({2, 6, 5}, rng), away_from_zero({3, 2, 3, 3}, rng, 0.05f, 0.5f),
                                          away_from_zero({3}, rng)};
                   const int stride = 1 + r % 2;
                   return check(in, [&](Tape& t, std::span<const Var> v) {
                     return smooth_scalar(t, ops::conv2d(t, v[0], v[1], v[2], stride));
                   }, seed + r);
                 }, 4), thr});
  out.push_back({"conv_transpose2d", worst([&](int r) {
                   std::vector<Tensor> in{away_from_zero({3, 3, 4}, rng), away_from_zero({3, 2, 3, 3}, rng, 0.05f, 0.5f),
                                          away_from_zero({2}, rng)};
                   return check(in, [&](Tape& t, std::span<const Var> v) {
                     return smooth_scalar(t, ops::conv_transpose2d(t, v[0], v[1], v[2]));
                   }, seed + r);
                 }, 3), thr});
  out.push_back({"conv1d", worst([&](int r) {
                   std::vector<Tensor> in{away_from_zero({4, 7}, rng), away_from_zero({3, 4, 3}, rng, 0.05f, 0.5f),
                                          away_from_zero({3}, rng)};
                   return check(in, [&](Tape& t, std::span<const Var> v) {
                     return smooth_scalar(t, ops::conv1d(t, v[0], v[1], v[2]));
                   }, seed + r);
                 }, 3), thr});
  out.push_back({"instance_norm", worst([&](int r) {
                   std::vector<Tensor> in{away_from_zero({3, 4, 4}, rng), away_from_zero({3}, rng), away_from_zero({3}, rng)};
                   return check(in, [&](Tape& t, std::span<const Var> v) {
                     // A fixed nonuniform weighting so the loss is not invariant to the normalization.
                     Var y = ops::instance_norm(t, v[0], v[1], v[2]);
                     return ops::mean_squared_to(t, ops::add_scalar(t, y, 0.1f * static_cast<float>(r + 1)), 0.7f);
                   }, seed + r);
                 }, 3), thr});
  out.push_back({"activations", worst([&](int r) {
                   std::vector<Tensor> in{away_from_zero({3, 5}, rng)};
                   return check(in, [&](Tape& t, std::span<const Var> v) {
                     Var a = ops::relu(t, v[0]);
                     Var b = ops::leaky_relu(t, v[0]);
                     Var c = ops::sigmoid(t, v[0]);
                     return ops::weighted_sum(t, {{1.0f, smooth_scalar(t, a)}, {0.5f, smooth_scalar(t, b)}, {2.0f, smooth_scalar(t, c)}});
                   }, seed + r);
                 }, 3), thr});
  out.push_back({"structural", worst([&](int r) {
                   std::vector<Tensor> in{away_from_zero({3, 4, 4}, rng), away_from_zero({3, 4, 4}, rng)};
                   return check(in, [&](Tape& t, std::span<const Var> v) {
                     Var s = ops::average(t, ops::add(t, v[0], v[1]), ops::add_scalar(t, v[1], 0.5f));
                     Var g = ops::gather_pixels(t, s, {0, 5, 5, 15, 7});
                     Var rows = ops::concat_rows(t, ops::slice_rows(t, g, 1, 2), g);
                     return smooth_scalar(t, rows);
                   }, seed + r);
                 }, 3), thr});
  out.push_back({"losses", worst([&](int r) {
                   Tensor target = away_from_zero({2, 3, 3}, rng);
                   std::vector<Tensor> in{away_from_zero({2, 3, 3}, rng), away_from_zero({1, 3, 3}, rng),
                                          away_from_zero({2, 6}, rng)};
                   // l1 needs inputs away from the target.
                   for (size_t i = 0; i < target.size(); ++i)
                     if (std::abs(in[0][i] - target[i]) < 0.05f) in[0][i] = target[i] + 0.1f;
                   const std::vector<CurvePiece> pieces{{0, 0, 6, {1, 1, 0, 1, 1, 1}}};
                   return check(in, [&](Tape& t, std::span<const Var> v) {
                     return ops::weighted_sum(t, {{1.0f, ops::l1_loss(t, v[0], target)},
                                                  {1.0f, ops::loss_adversarial(t, v[1])},
                                                  {1.0f, ops::disc_loss(t, v[1], v[0])},
                                                  {0.5f, ops::loss_shape_reg(t, pieces, {v[2]})}});
                   }, seed + r);
                 }, 3), thr});

  double raster = 0;
  for (int scene = 0; scene < 20; ++scene) {
    const StrokeSet s = random_raster_scene(rng, 32, 3);
    Buffer w(32 * 32);
    std::uniform_real_distribution<float> u(-1.0f, 1.0f);
    for (float& v : w) v = u(rng);
    raster = std::max(raster, raster_gradcheck(s, {0, 0, 32, 32}, w).max_rel_err);
  }
  out.push_back({"rasterizer", raster, thr});
  return out;
}

// ---------------------------------------------------------------- commands

struct LoadedInputs {
  Tensor V;
  io::CurveFile curves;
};

inline CurveSet prepared_curves(const io::CurveFile& cf, const TrainConfig& t) {
  return resample_uniform(cf.curves, t.spacing > 0 ? t.spacing : default_spacing(cf.width));
}

inline LoadedInputs load_inputs(const fs::path& features, const fs::path& curves) {
  LoadedInputs in{io::read_feature_stack(features).data, io::read_curves(curves)};
  if (in.V.dim(0) != kSurfaceChannels)
    throw DataError(features.string() + ": expected " + std::to_string(kSurfaceChannels) + " channels, got " +
                    std::to_string(in.V.dim(0)));
  if (in.curves.width != in.V.dim(2) || in.curves.height != in.V.dim(1))
    throw DataError(curves.string() + ": canvas " + std::to_string(in.curves.width) + "x" + std::to_string(in.curves.height) +
                    " does not match features " + std::to_string(in.V.dim(2)) + "x" + std::to_string(in.V.dim(1)));
  return in;
}

inline Tensor grayscale(const Tensor& img) {
  if (img.dim(0) == 1) return img;
  Tensor g({1, img.dim(1), img.dim(2)});
  for (int y = 0; y < img.dim(1); ++y)
    for (int x = 0; x < img.dim(2); ++x)
      g.at(0, y, x) = (img.at(0, y, x) + img.at(1, y, x) + img.at(2, y, x)) / 3.0f;
  return g;
}

inline void write_csv(const fs::path& p, const auto& rows) {
  std::ostringstream os;
  write_loss_csv(os, rows);
  io::write_file(p, os.str());
}

inline int run(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"nstrokes: neural stroke stylization"};
  app.require_subcommand(1);
  std::string config_path, out_dir = ".";
  std::uint64_t seed = 0;
  int iters = -1, size = -1;
  auto common = [&](CLI::App* s) {
    s->add_option("--config", config_path, "key = value configuration file")->check(CLI::ExistingFile);
    s->add_option("--seed", seed, "seed for every random choice");
    s->add_option("--out-dir", out_dir, "output directory");
    s->add_option("--iters", iters, "iteration count (total, resume included)")->check(CLI::NonNegativeNumber);
    s->add_option("--size", size, "canvas size (gen-example) or single crop scale (training)")->check(CLI::PositiveNumber);
  };
  std::string features, curves, mask, drawing, target, checkpoint, resume, rendered, strokes_in;
  bool no_texture = false, textures = false;
  double threshold = 0.5;
  std::vector<std::string> eval_files;

  auto* gen = app.add_subcommand("gen-example", "procedural feature stack and curves");
  auto* prep = app.add_subcommand("prepare-mask", "soft mask from a drawing");
  auto* synth = app.add_subcommand("synth-style", "ground-truth strokes and drawing from a synthetic style");
  auto* tg = app.add_subcommand("train-geometry", "train the surface and path modules");
  auto* tt = app.add_subcommand("train-texture", "train the texture module and discriminator");
  auto* inf = app.add_subcommand("infer", "strokes, rendering and drawing from a checkpoint");
  auto* svg = app.add_subcommand("export-svg", "vector export of predicted strokes");
  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every op family");
  auto* ev = app.add_subcommand("eval", "mean-L1, RMSE and ink-only L1 between two images");
  for (auto* s : {gen, prep, synth, tg, tt, inf, svg, gc, ev}) common(s);

  prep->add_option("--drawing", drawing, "drawing (PGM or PPM)")->required();
  prep->add_option("--threshold", threshold, "ink threshold on luminance");
  for (auto* s : {synth, tg, tt, inf, svg}) {
    s->add_option("--features", features, "feature stack (.nsfs)")->required();
    s->add_option("--curves", curves, "curve file (.json)")->required();
  }
  tg->add_option("--mask", mask, "soft mask (PGM)")->required();
  tg->add_option("--resume", resume, "continue from a geometry checkpoint");
  tt->add_option("--target", target, "drawing to imitate (PPM)")->required();
  tt->add_option("--checkpoint", checkpoint, "geometry checkpoint")->required();
  tt->add_option("--mask", mask, "soft mask (PGM); default: derived from the target");
  tt->add_option("--rendered", rendered, "grayscale stroke rendering; default: inferred from the checkpoint");
  tt->add_option("--resume", resume, "continue from a texture checkpoint");
  inf->add_option("--checkpoint", checkpoint, "checkpoint")->required();
  inf->add_flag("--no-texture", no_texture, "skip the texture module");
  svg->add_option("--checkpoint", checkpoint, "checkpoint")->required();
  svg->add_flag("--textures", textures, "also bake per-stroke texture maps");
  ev->add_option("images", eval_files, "two images")->required()->expected(2);
  ev->add_option("--threshold", threshold, "ink threshold on channel mean");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  }

  try {
    Config cfg = config_path.empty() ? Config{} : Config::load(config_path);
    const fs::path dir(out_dir);
    auto tcfg = [&] {
      TrainConfig t = train_config(cfg, seed);
      if (iters >= 0) t.iterations = iters;
      if (size > 0) t.scales = {size};
      return t;
    };

    if (gen->parsed()) {
      cfg.require_all_used();
      const SynthScene sc = make_synth_scene(seed, size > 0 ? size : 128);
      io::write_feature_stack(dir / "features.nsfs", sc.V);
      io::write_curves(dir / "curves.json", {sc.V.dim(2), sc.V.dim(1), sc.curves});
      out << "wrote " << (dir / "features.nsfs").string() << " and " << (dir / "curves.json").string() << "\n";
    } else if (prep->parsed()) {
      const double blur = cfg.integer("mask_blur", 1);
      cfg.require_all_used();
      const Tensor m = extract_soft_mask(io::read_image(drawing), threshold, static_cast<int>(blur));
      io::write_image(dir / "mask.pgm", m);
      out << "wrote " << (dir / "mask.pgm").string() << "\n";
    } else if (synth->parsed()) {
      const SynthStyle st = synth_style(cfg);
      const TrainConfig t = tcfg();
      cfg.require_all_used();
      const LoadedInputs in = load_inputs(features, curves);
      if (st.feature_channel >= in.V.dim(0)) throw UsageError("feature_channel out of range");
      const CurveSet base = prepared_curves(in.curves, t);
      const StrokeSet truth = apply_style(st, base, in.V);
      const Tensor img = render(truth, {0, 0, in.V.dim(2), in.V.dim(1)}, t.aa_width).image;
      io::export_svg(dir / "truth.svg", truth, in.V.dim(2), in.V.dim(1));
      io::write_image(dir / "drawing.pgm", img);
      io::write_image(dir / "drawing.ppm", colorize(img, st));
      io::write_image(dir / "mask.pgm", img);
      out << "wrote truth.svg, drawing.pgm, drawing.ppm, mask.pgm to " << dir.string() << "\n";
    } else if (tg->parsed()) {
      const TrainConfig t = tcfg();
      cfg.require_all_used();
      const LoadedInputs in = load_inputs(features, curves);
      const Tensor m = io::read_image(mask);
      if (m.dim(0) != 1) throw DataError(mask + ": mask must be grayscale");
      ParamStore params = make_params({.seed = seed});
      int begin = 0;
      if (!resume.empty()) {
        io::Checkpoint ck = io::load_checkpoint(resume);
        params = std::move(ck.params);
        begin = ck.config.value("iteration", 0);
      }
      const int end = std::max(begin, t.iterations);
      GeometryInputs gi{in.V, prepared_curves(in.curves, t), m};
      const auto rows = train_geometry(params, gi, t, begin, end, [&](int done) {
        if (done % 100 == 0 || done == end) err << "geometry " << done << "/" << end << "\n";
      });
      json echo_cfg = {{"stage", "geometry"}, {"iteration", end}, {"train", echo(t)}};
      io::save_checkpoint(dir / "geometry.ckpt", params, echo_cfg);
      write_csv(dir / "geometry_loss.csv", rows);
      out << "wrote " << (dir / "geometry.ckpt").string() << " at iteration " << end << "\n";
    } else if (tt->parsed()) {
      const TrainConfig t = tcfg();
      cfg.require_all_used();
      const LoadedInputs in = load_inputs(features, curves);
      const Tensor tgt = io::read_image(target);
      if (tgt.dim(0) != 3) throw DataError(target + ": target must be RGB (PPM)");
      io::Checkpoint ck = io::load_checkpoint(resume.empty() ? checkpoint : resume);
      ParamStore params = std::move(ck.params);
      const int begin = resume.empty() ? 0 : ck.config.value("iteration", 0);
      const CurveSet base = prepared_curves(in.curves, t);
      Tensor ib;
      if (!rendered.empty()) {
        ib = grayscale(io::read_image(rendered));
      } else {
        ib = infer(params, base, in.V, {.base_thickness = t.base_thickness, .aa_width = t.aa_width, .run_texture = false}).rendered;
      }
      const Tensor m = mask.empty() ? extract_soft_mask(tgt) : io::read_image(mask);
      const int end = std::max(begin, t.iterations);
      const auto rows = train_texture(params, {in.V, ib, tgt, m}, t, begin, end, [&](int done) {
        if (done % 100 == 0 || done == end) err << "texture " << done << "/" << end << "\n";
      });
      json echo_cfg = {{"stage", "texture"}, {"iteration", end}, {"train", echo(t)}};
      io::save_checkpoint(dir / "texture.ckpt", params, echo_cfg);
      write_csv(dir / "texture_loss.csv", rows);
      out << "wrote " << (dir / "texture.ckpt").string() << " at iteration " << end << "\n";
    } else if (inf->parsed() || svg->parsed()) {
      const TrainConfig t = tcfg();
      cfg.require_all_used();
      const LoadedInputs in = load_inputs(features, curves);
      ParamStore params = io::load_checkpoint(checkpoint).params;
      const bool tex = inf->parsed() ? !no_texture : textures;
      const InferResult r =
          infer(params, prepared_curves(in.curves, t), in.V, {.base_thickness = t.base_thickness, .aa_width = t.aa_width, .run_texture = tex});
      io::export_svg(dir / "strokes.svg", r.strokes, in.V.dim(2), in.V.dim(1));
      if (inf->parsed()) {
        io::write_image(dir / "rendered.pgm", r.rendered);
        if (tex) io::write_image(dir / "drawing.ppm", r.drawing);
      } else if (tex) {
        const auto maps = io::bake_stroke_textures(r.strokes, r.drawing);
        for (size_t i = 0; i < maps.size(); ++i) {
          char name[32];
          std::snprintf(name, sizeof name, "stroke_%04zu", i);
          const Tensor& rgba = maps[i].rgba;
          if (rgba.size() == 0) continue;
          io::write_image(dir / "textures" / (std::string(name) + ".ppm"), channels(rgba, 0, 3));
          io::write_image(dir / "textures" / (std::string(name) + "_alpha.pgm"), channels(rgba, 3, 1));
        }
      }
      out << "wrote outputs to " << dir.string() << "\n";
    } else if (gc->parsed()) {
      cfg.require_all_used();
      bool ok = true;
      out << "family,max_rel_err,threshold,status\n";
      for (const auto& r : run_gradchecks(seed)) {
        const bool pass = r.max_rel_err < r.threshold;
        ok &= pass;
        char line[160];
        std::snprintf(line, sizeof line, "%s,%.3e,%.0e,%s\n", r.family.c_str(), r.max_rel_err, r.threshold, pass ? "ok" : "FAIL");
        out << line;
      }
      return ok ? kOk : kNumerical;
    } else if (ev->parsed()) {
      cfg.require_all_used();
      const EvalMetrics m = eval_metrics(io::read_image(eval_files[0]), io::read_image(eval_files[1]), threshold);
      char line[160];
      std::snprintf(line, sizeof line, "%.9g,%.9g,%.9g\n", m.mean_l1, m.rmse, m.ink_l1);
      out << "mean_l1,rmse,ink_l1\n" << line;
    }
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << "\n";
    return kNumerical;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kData;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << "\n";
    return kData;
  } catch (const json::exception& e) {
    err << "data error: " << e.what() << "\n";
    return kData;
  }
  return kOk;
}

}  // namespace nstrokes::cli
