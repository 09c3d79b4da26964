#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "nstrokes/tape.hpp"

namespace nstrokes {

struct GradCheckOptions {
  double step = 1e-3;
  // Coordinates tested per input; 0 tests every coordinate.
  int max_coords = 0;
  std::uint64_t seed = 0;
};

/// One differentiable input: its values (perturbed in place) and the
/// analytic gradient computed beforehand.
struct GradCheckInput {
  std::span<float> values;
  std::span<const float> analytic;
};

/// max |analytic - numeric| / max(1, |numeric|) over the tested coordinates,
/// numeric being the central difference of f.
inline double finite_diff_check(const std::function<double()>& f, std::span<GradCheckInput> inputs,
                                const GradCheckOptions& opt = {}) {
  std::mt19937_64 rng(opt.seed);
  double worst = 0.0;
  for (auto& in : inputs) {
    if (in.values.size() != in.analytic.size()) throw ShapeError("finite_diff_check: gradient size mismatch");
    std::vector<size_t> coords(in.values.size());
    for (size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (opt.max_coords > 0 && coords.size() > static_cast<size_t>(opt.max_coords)) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(static_cast<size_t>(opt.max_coords));
    }
    for (size_t i : coords) {
      const float orig = in.values[i];
      in.values[i] = static_cast<float>(orig + opt.step);
      const double fp = f();
      in.values[i] = static_cast<float>(orig - opt.step);
      const double fm = f();
      in.values[i] = orig;
      if (!std::isfinite(fp) || !std::isfinite(fm) || !std::isfinite(in.analytic[i]))
        throw NumericalError("finite_diff_check: non-finite value");
      const double numeric = (fp - fm) / (2.0 * opt.step);
      worst = std::max(worst, std::abs(in.analytic[i] - numeric) / std::max(1.0, std::abs(numeric)));
    }
  }
  return worst;
}

/// Tape-level convenience: `build` records a scalar graph from the given
/// parameter Vars. Gradients are taken from one backward pass, then every
/// tensor is perturbed through finite_diff_check.
inline double gradcheck(const std::function<Var(Tape&, std::span<const Var>)>& build,
                        std::span<Tensor* const> params, const GradCheckOptions& opt = {}) {
  auto evaluate = [&](bool with_backward) {
    Tape tape;
    std::vector<Var> vars;
    for (Tensor* p : params) vars.push_back(tape.parameter(*p));
    Var out = build(tape, vars);
    if (tape.value(out).size() != 1) throw ShapeError("gradcheck: graph output must be scalar");
    const double v = tape.value(out)[0];
    if (with_backward) tape.backward(out);
    return v;
  };
  for (Tensor* p : params) {
    p->grad();
    p->zero_grad();
  }
  evaluate(true);
  std::vector<Buffer> analytic;
  for (Tensor* p : params) analytic.push_back(p->grad());
  std::vector<GradCheckInput> inputs;
  for (size_t i = 0; i < params.size(); ++i) inputs.push_back({params[i]->values(), analytic[i]});
  return finite_diff_check([&] { return evaluate(false); }, inputs, opt);
}

}  // namespace nstrokes
