#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "nstrokes/tensor.hpp"

namespace nstrokes {

struct AdamState {
  Buffer m;
  Buffer v;
  std::uint64_t step_count = 0;
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

/// One bias-corrected Adam update from param.grad(). The gradient buffer is
/// left untouched; callers zero it between iterations.
inline void adam_step(Tensor& param, AdamState& st) {
  if (!param.has_grad()) throw NumericalError("adam_step: parameter has no gradient buffer");
  const auto& g = param.grad();
  if (st.m.size() != param.size()) st.m.assign(param.size(), 0.0f);
  if (st.v.size() != param.size()) st.v.assign(param.size(), 0.0f);
  st.step_count += 1;
  const double t = static_cast<double>(st.step_count);
  const double bc1 = 1.0 - std::pow(st.beta1, t);
  const double bc2 = 1.0 - std::pow(st.beta2, t);
  for (size_t i = 0; i < param.size(); ++i) {
    const double gi = g[i];
    const double m = st.beta1 * st.m[i] + (1.0 - st.beta1) * gi;
    const double v = st.beta2 * st.v[i] + (1.0 - st.beta2) * gi * gi;
    st.m[i] = static_cast<float>(m);
    st.v[i] = static_cast<float>(v);
    const double mhat = m / bc1;
    const double vhat = v / bc2;
    param[i] = static_cast<float>(param[i] - st.lr * mhat / (std::sqrt(vhat) + st.eps));
  }
}

}  // namespace nstrokes
