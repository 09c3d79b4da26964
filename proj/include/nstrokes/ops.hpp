#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <utility>
#include <vector>

#include "nstrokes/tape.hpp"

namespace nstrokes::ops {

namespace detail {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

struct Geometry {
  int channels, height, width;  // input
  int kh, kw, stride, pad_h, pad_w;
  int out_h, out_w;
  int rows() const { return channels * kh * kw; }
  int cols() const { return out_h * out_w; }
};

// Unfolds output rows [oy0, oy1) of [C,H,W] into
// [C*kh*kw, (oy1-oy0)*out_w] (zero padding).
inline void im2col(const float* x, const Geometry& g, int oy0, int oy1, float* cols) {
  const size_t n = static_cast<size_t>(oy1 - oy0) * g.out_w;
  for (int c = 0; c < g.channels; ++c) {
    const float* plane = x + static_cast<size_t>(c) * g.height * g.width;
    for (int ki = 0; ki < g.kh; ++ki) {
      for (int kj = 0; kj < g.kw; ++kj) {
        float* dst = cols + static_cast<size_t>((c * g.kh + ki) * g.kw + kj) * n;
        for (int oy = oy0; oy < oy1; ++oy) {
          float* row = dst + static_cast<size_t>(oy - oy0) * g.out_w;
          const int iy = oy * g.stride - g.pad_h + ki;
          if (iy < 0 || iy >= g.height) {
            std::fill_n(row, g.out_w, 0.0f);
            continue;
          }
          const float* src = plane + static_cast<size_t>(iy) * g.width;
          if (g.stride == 1) {
            const int lo = std::clamp(g.pad_w - kj, 0, g.out_w);
            const int hi = std::clamp(g.width + g.pad_w - kj, lo, g.out_w);
            std::fill_n(row, lo, 0.0f);
            std::memcpy(row + lo, src + lo - g.pad_w + kj, sizeof(float) * (hi - lo));
            std::fill_n(row + hi, g.out_w - hi, 0.0f);
          } else {
            for (int ox = 0; ox < g.out_w; ++ox) {
              const int ix = ox * g.stride - g.pad_w + kj;
              row[ox] = (ix >= 0 && ix < g.width) ? src[ix] : 0.0f;
            }
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-adds the columns of rows [oy0, oy1) into [C,H,W].
inline void col2im(const float* cols, const Geometry& g, int oy0, int oy1, float* x) {
  const size_t n = static_cast<size_t>(oy1 - oy0) * g.out_w;
  for (int c = 0; c < g.channels; ++c) {
    float* plane = x + static_cast<size_t>(c) * g.height * g.width;
    for (int ki = 0; ki < g.kh; ++ki) {
      for (int kj = 0; kj < g.kw; ++kj) {
        const float* src = cols + static_cast<size_t>((c * g.kh + ki) * g.kw + kj) * n;
        for (int oy = oy0; oy < oy1; ++oy) {
          const int iy = oy * g.stride - g.pad_h + ki;
          if (iy < 0 || iy >= g.height) continue;
          const float* row = src + static_cast<size_t>(oy - oy0) * g.out_w;
          float* dst = plane + static_cast<size_t>(iy) * g.width;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * g.stride - g.pad_w + kj;
            if (ix >= 0 && ix < g.width) dst[ix] += row[ox];
          }
        }
      }
    }
  }
}

inline bool is_pointwise(const Geometry& g) {
  return g.kh == 1 && g.kw == 1 && g.stride == 1 && g.pad_h == 0 && g.pad_w == 0;
}

// Output rows per im2col chunk; a column buffer of ~1 MB stays in cache.
inline int chunk_rows(const Geometry& g) {
  constexpr size_t kBudget = size_t{1} << 18;
  const size_t per_row = static_cast<size_t>(g.rows()) * g.out_w;
  return static_cast<int>(std::clamp<size_t>(kBudget / std::max<size_t>(per_row, 1), 1, g.out_h));
}

template <class Fn>
void for_chunks(const Geometry& g, Fn&& fn) {
  const int step = chunk_rows(g);
  for (int oy0 = 0; oy0 < g.out_h; oy0 += step) fn(oy0, std::min(g.out_h, oy0 + step));
}

// Shared body of conv2d/conv1d: out[Cout, N] = W[Cout, K] * cols[K, N] + b.
inline Var conv_core(Tape& tape, Var x, Var w, Var b, const Geometry& g, int out_channels,
                     Shape out_shape) {
  const Tensor& xv = tape.value(x);
  const Tensor& wv = tape.value(w);
  const int K = g.rows(), N = g.cols();
  Tensor out(std::move(out_shape));
  MatMap y(out.data(), out_channels, N);
  ConstMatMap wm(wv.data(), out_channels, K);
  if (is_pointwise(g)) {
    y.noalias() = wm * ConstMatMap(xv.data(), K, N);
  } else {
    Buffer cols;
    for_chunks(g, [&](int oy0, int oy1) {
      const int n = (oy1 - oy0) * g.out_w;
      cols.resize(static_cast<size_t>(K) * n);
      im2col(xv.data(), g, oy0, oy1, cols.data());
      y.middleCols(oy0 * g.out_w, n).noalias() = wm * ConstMatMap(cols.data(), K, n);
    });
  }
  if (b.valid()) {
    const Tensor& bv = tape.value(b);
    for (int o = 0; o < out_channels; ++o) y.row(o).array() += bv[o];
  }
  return tape.record(std::move(out), {x, w, b}, [x, w, b, g, out_channels](Tape& t, Var self) {
    const int K = g.rows(), N = g.cols();
    ConstMatMap gy(t.grad(self).data(), out_channels, N);
    const float* xdata = t.value(x).data();
    if (b.valid() && t.needs_grad(b)) {
      auto& gb = t.grad(b);
      for (int o = 0; o < out_channels; ++o) gb[o] += gy.row(o).sum();
    }
    const bool gw_needed = t.needs_grad(w), gx_needed = t.needs_grad(x);
    if (!gw_needed && !gx_needed) return;
    ConstMatMap wm(t.value(w).data(), out_channels, K);
    if (is_pointwise(g)) {
      if (gw_needed) MatMap(t.grad(w).data(), out_channels, K).noalias() += gy * ConstMatMap(xdata, K, N).transpose();
      if (gx_needed) MatMap(t.grad(x).data(), K, N).noalias() += wm.transpose() * gy;
      return;
    }
    float* gx = gx_needed ? t.grad(x).data() : nullptr;
    float* gwp = gw_needed ? t.grad(w).data() : nullptr;
    Buffer cols;
    for_chunks(g, [&](int oy0, int oy1) {
      const int n = (oy1 - oy0) * g.out_w;
      cols.resize(static_cast<size_t>(K) * n);
      auto gyc = gy.middleCols(oy0 * g.out_w, n);
      if (gwp) {
        im2col(xdata, g, oy0, oy1, cols.data());
        MatMap(gwp, out_channels, K).noalias() += gyc * ConstMatMap(cols.data(), K, n).transpose();
      }
      if (gx) {
        MatMap(cols.data(), K, n).noalias() = wm.transpose() * gyc;
        col2im(cols.data(), g, oy0, oy1, gx);
      }
    });
  });
}

}  // namespace detail

/// 2D convolution of [C_in,H,W] with weights [C_out,C_in,k,k] and bias [C_out]
/// (pass an invalid Var for no bias). pad < 0 selects (k-1)/2.
inline Var conv2d(Tape& tape, Var x, Var w, Var b, int stride, int pad = -1) {
  const Tensor& xv = tape.value(x);
  const Tensor& wv = tape.value(w);
  require_rank(xv, 3, "conv2d input");
  require_rank(wv, 4, "conv2d weight");
  if (wv.dim(2) != wv.dim(3)) throw ShapeError("conv2d: non-square kernel " + shape_str(wv.shape()));
  if (wv.dim(1) != xv.dim(0))
    throw ShapeError("conv2d: weight " + shape_str(wv.shape()) + " does not match input " +
                     shape_str(xv.shape()));
  if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
  if (b.valid() && tape.value(b).size() != static_cast<size_t>(wv.dim(0)))
    throw ShapeError("conv2d: bias length mismatch");
  const int k = wv.dim(2);
  if (pad < 0) pad = (k - 1) / 2;
  detail::Geometry g{xv.dim(0), xv.dim(1), xv.dim(2), k, k, stride, pad, pad, 0, 0};
  g.out_h = (g.height + 2 * pad - k) / stride + 1;
  g.out_w = (g.width + 2 * pad - k) / stride + 1;
  if (g.out_h < 1 || g.out_w < 1) throw ShapeError("conv2d: input too small for kernel");
  return detail::conv_core(tape, x, w, b, g, wv.dim(0), {wv.dim(0), g.out_h, g.out_w});
}

/// Transposed convolution with stride 2 and padding (k-1)/2; the output is
/// exactly [C_out, 2H, 2W]. Weights are laid out [C_in, C_out, k, k].
inline Var conv_transpose2d(Tape& tape, Var x, Var w, Var b) {
  using namespace detail;
  const Tensor& xv = tape.value(x);
  const Tensor& wv = tape.value(w);
  require_rank(xv, 3, "conv_transpose2d input");
  require_rank(wv, 4, "conv_transpose2d weight");
  if (wv.dim(2) != wv.dim(3)) throw ShapeError("conv_transpose2d: non-square kernel");
  if (wv.dim(0) != xv.dim(0)) throw ShapeError("conv_transpose2d: weight/input channel mismatch");
  const int cin = wv.dim(0), cout = wv.dim(1), k = wv.dim(2), pad = (k - 1) / 2;
  // Geometry of the forward conv that this op is the adjoint of: [cout,2H,2W] -> [cin,H,W].
  Geometry g{cout, 2 * xv.dim(1), 2 * xv.dim(2), k, k, 2, pad, pad, xv.dim(1), xv.dim(2)};
  if ((g.height + 2 * pad - k) / 2 + 1 != g.out_h)
    throw ShapeError("conv_transpose2d: kernel size does not double spatial dims");
  const int K = g.rows(), N = g.cols();
  Tensor out({cout, g.height, g.width});
  {
    ConstMatMap xm(xv.data(), cin, N);
    ConstMatMap wm(wv.data(), cin, K);
    Buffer cols;
    for_chunks(g, [&](int oy0, int oy1) {
      const int n = (oy1 - oy0) * g.out_w;
      cols.resize(static_cast<size_t>(K) * n);
      MatMap(cols.data(), K, n).noalias() = wm.transpose() * xm.middleCols(oy0 * g.out_w, n);
      col2im(cols.data(), g, oy0, oy1, out.data());
    });
  }
  if (b.valid()) {
    const Tensor& bv = tape.value(b);
    if (bv.size() != static_cast<size_t>(cout)) throw ShapeError("conv_transpose2d: bias length mismatch");
    const size_t plane = static_cast<size_t>(g.height) * g.width;
    for (int o = 0; o < cout; ++o)
      for (size_t i = 0; i < plane; ++i) out[o * plane + i] += bv[o];
  }
  return tape.record(std::move(out), {x, w, b}, [x, w, b, g, cin, cout](Tape& t, Var self) {
    const int K = g.rows(), N = g.cols();
    const auto& gy = t.grad(self);
    if (b.valid() && t.needs_grad(b)) {
      auto& gb = t.grad(b);
      const size_t plane = static_cast<size_t>(g.height) * g.width;
      for (int o = 0; o < cout; ++o) {
        double s = 0;
        for (size_t i = 0; i < plane; ++i) s += gy[o * plane + i];
        gb[o] += static_cast<float>(s);
      }
    }
    if (!t.needs_grad(w) && !t.needs_grad(x)) return;
    const bool gw_needed = t.needs_grad(w), gx_needed = t.needs_grad(x);
    ConstMatMap xm(t.value(x).data(), cin, N);
    ConstMatMap wm(t.value(w).data(), cin, K);
    float* gwp = gw_needed ? t.grad(w).data() : nullptr;
    float* gxp = gx_needed ? t.grad(x).data() : nullptr;
    Buffer dcols;
    for_chunks(g, [&](int oy0, int oy1) {
      const int n = (oy1 - oy0) * g.out_w;
      dcols.resize(static_cast<size_t>(K) * n);
      im2col(gy.data(), g, oy0, oy1, dcols.data());
      ConstMatMap dc(dcols.data(), K, n);
      if (gwp) MatMap(gwp, cin, K).noalias() += xm.middleCols(oy0 * g.out_w, n) * dc.transpose();
      if (gxp) MatMap(gxp, cin, N).middleCols(oy0 * g.out_w, n).noalias() += wm * dc;
    });
  });
}

/// 1D convolution along M of [C_in, M] with kernel 3, stride 1, zero padding 1.
inline Var conv1d(Tape& tape, Var x, Var w, Var b) {
  const Tensor& xv = tape.value(x);
  const Tensor& wv = tape.value(w);
  require_rank(xv, 2, "conv1d input");
  require_rank(wv, 3, "conv1d weight");
  if (xv.dim(1) < 1) throw ShapeError("conv1d: sequence length must be >= 1");
  if (wv.dim(2) != 3) throw ShapeError("conv1d: kernel size must be 3");
  if (wv.dim(1) != xv.dim(0)) throw ShapeError("conv1d: weight/input channel mismatch");
  detail::Geometry g{xv.dim(0), 1, xv.dim(1), 1, 3, 1, 0, 1, 1, xv.dim(1)};
  return detail::conv_core(tape, x, w, b, g, wv.dim(0), {wv.dim(0), xv.dim(1)});
}

/// Per-channel normalization over the spatial extent of [C, ...].
inline Var instance_norm(Tape& tape, Var x, Var gamma, Var beta, float eps = 1e-5f) {
  const Tensor& xv = tape.value(x);
  if (xv.rank() < 2) throw ShapeError("instance_norm: rank must be >= 2");
  const int C = xv.dim(0);
  const size_t n = xv.size() / static_cast<size_t>(C);
  if (n < 2) throw ShapeError("instance_norm: needs at least 2 elements per channel");
  const Tensor& gv = tape.value(gamma);
  const Tensor& bv = tape.value(beta);
  if (gv.size() != static_cast<size_t>(C) || bv.size() != static_cast<size_t>(C))
    throw ShapeError("instance_norm: affine parameter length mismatch");
  Tensor out(xv.shape());
  Tensor xhat(xv.shape());
  Buffer inv_std(static_cast<size_t>(C));
  for (int c = 0; c < C; ++c) {
    const float* src = xv.data() + c * n;
    const Eigen::Map<const Eigen::ArrayXf> xs(src, static_cast<Eigen::Index>(n));
    const double mean = static_cast<double>(xs.sum()) / static_cast<double>(n);
    const double var = static_cast<double>((xs - static_cast<float>(mean)).square().sum()) / static_cast<double>(n);
    const float is = static_cast<float>(1.0 / std::sqrt(var + eps));
    inv_std[c] = is;
    const float m = static_cast<float>(mean);
    float* xh = xhat.data() + c * n;
    float* dst = out.data() + c * n;
    for (size_t i = 0; i < n; ++i) {
      xh[i] = (src[i] - m) * is;
      dst[i] = gv[c] * xh[i] + bv[c];
    }
  }
  return tape.record(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), C, n](Tape& t, Var self) {
        const auto& gy = t.grad(self);
        const Tensor& gv = t.value(gamma);
        Buffer* gx = t.needs_grad(x) ? &t.grad(x) : nullptr;
        Buffer* gg = t.needs_grad(gamma) ? &t.grad(gamma) : nullptr;
        Buffer* gb = t.needs_grad(beta) ? &t.grad(beta) : nullptr;
        for (int c = 0; c < C; ++c) {
          const float* dy = gy.data() + c * n;
          const float* xh = xhat.data() + c * n;
          const Eigen::Map<const Eigen::ArrayXf> dya(dy, static_cast<Eigen::Index>(n));
          const Eigen::Map<const Eigen::ArrayXf> xha(xh, static_cast<Eigen::Index>(n));
          const double sum_dy = dya.sum();
          const double sum_dy_xh = (dya * xha).sum();
          if (gg) (*gg)[c] += static_cast<float>(sum_dy_xh);
          if (gb) (*gb)[c] += static_cast<float>(sum_dy);
          if (gx) {
            const float k = gv[c] * inv_std[c];
            const float mdy = static_cast<float>(sum_dy / static_cast<double>(n));
            const float mdyxh = static_cast<float>(sum_dy_xh / static_cast<double>(n));
            float* dx = gx->data() + c * n;
            for (size_t i = 0; i < n; ++i) dx[i] += k * (dy[i] - mdy - xh[i] * mdyxh);
          }
        }
      });
}

enum class Activation { relu, leaky_relu, sigmoid };

inline Var activation(Tape& tape, Var x, Activation kind, float slope = 0.2f) {
  const Tensor& xv = tape.value(x);
  Tensor out(xv.shape());
  const size_t n = xv.size();
  switch (kind) {
    case Activation::relu:
      for (size_t i = 0; i < n; ++i) out[i] = xv[i] > 0.0f ? xv[i] : 0.0f;
      break;
    case Activation::leaky_relu:
      for (size_t i = 0; i < n; ++i) out[i] = xv[i] > 0.0f ? xv[i] : slope * xv[i];
      break;
    case Activation::sigmoid:
      for (size_t i = 0; i < n; ++i) out[i] = 1.0f / (1.0f + std::exp(-xv[i]));
      break;
  }
  return tape.record(std::move(out), {x}, [x, kind, slope](Tape& t, Var self) {
    const auto& gy = t.grad(self);
    const Tensor& xv = t.value(x);
    auto& gx = t.grad(x);
    const size_t n = gy.size();
    switch (kind) {
      case Activation::relu:
        for (size_t i = 0; i < n; ++i)
          if (xv[i] > 0.0f) gx[i] += gy[i];
        break;
      case Activation::leaky_relu:
        for (size_t i = 0; i < n; ++i) gx[i] += xv[i] > 0.0f ? gy[i] : slope * gy[i];
        break;
      case Activation::sigmoid: {
        const Tensor& yv = t.value(self);
        for (size_t i = 0; i < n; ++i) gx[i] += gy[i] * yv[i] * (1.0f - yv[i]);
        break;
      }
    }
  });
}

inline Var relu(Tape& t, Var x) { return activation(t, x, Activation::relu); }
inline Var leaky_relu(Tape& t, Var x, float slope = 0.2f) {
  return activation(t, x, Activation::leaky_relu, slope);
}
inline Var sigmoid(Tape& t, Var x) { return activation(t, x, Activation::sigmoid); }

inline Var add(Tape& tape, Var a, Var b) {
  const Tensor& av = tape.value(a);
  const Tensor& bv = tape.value(b);
  require_same_shape(av, bv, "add");
  Tensor out(av.shape());
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return tape.record(std::move(out), {a, b}, [a, b](Tape& t, Var self) {
    const auto& gy = t.grad(self);
    for (Var v : {a, b}) {
      if (!t.needs_grad(v)) continue;
      auto& g = t.grad(v);
      for (size_t i = 0; i < g.size(); ++i) g[i] += gy[i];
    }
  });
}

/// 0.5*(a+b); symmetric in its arguments bit-for-bit.
inline Var average(Tape& tape, Var a, Var b) {
  const Tensor& av = tape.value(a);
  const Tensor& bv = tape.value(b);
  require_same_shape(av, bv, "average");
  Tensor out(av.shape());
  for (size_t i = 0; i < out.size(); ++i) out[i] = (av[i] + bv[i]) * 0.5f;
  return tape.record(std::move(out), {a, b}, [a, b](Tape& t, Var self) {
    const auto& gy = t.grad(self);
    for (Var v : {a, b}) {
      if (!t.needs_grad(v)) continue;
      auto& g = t.grad(v);
      for (size_t i = 0; i < g.size(); ++i) g[i] += 0.5f * gy[i];
    }
  });
}

inline Var add_scalar(Tape& tape, Var a, float s) {
  const Tensor& av = tape.value(a);
  Tensor out(av.shape());
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] + s;
  return tape.record(std::move(out), {a}, [a](Tape& t, Var self) {
    const auto& gy = t.grad(self);
    auto& g = t.grad(a);
    for (size_t i = 0; i < g.size(); ++i) g[i] += gy[i];
  });
}

/// Rows [begin, begin+count) along the first dimension.
inline Var slice_rows(Tape& tape, Var x, int begin, int count) {
  const Tensor& xv = tape.value(x);
  if (xv.rank() < 1 || begin < 0 || begin + count > xv.dim(0)) throw ShapeError("slice_rows out of range");
  Shape s = xv.shape();
  s[0] = count;
  const size_t stride = xv.size() / static_cast<size_t>(xv.dim(0));
  Tensor out(s);
  std::copy_n(xv.data() + stride * begin, stride * count, out.data());
  return tape.record(std::move(out), {x}, [x, begin, stride](Tape& t, Var self) {
    const auto& gy = t.grad(self);
    auto& g = t.grad(x);
    for (size_t i = 0; i < gy.size(); ++i) g[stride * begin + i] += gy[i];
  });
}

/// Concatenation along the first dimension.
inline Var concat_rows(Tape& tape, Var a, Var b) {
  const Tensor& av = tape.value(a);
  const Tensor& bv = tape.value(b);
  if (av.rank() != bv.rank() || av.rank() < 1) throw ShapeError("concat_rows rank mismatch");
  for (int i = 1; i < av.rank(); ++i)
    if (av.dim(i) != bv.dim(i)) throw ShapeError("concat_rows trailing dims mismatch");
  Shape s = av.shape();
  s[0] += bv.dim(0);
  Tensor out(s);
  std::copy(av.values().begin(), av.values().end(), out.data());
  std::copy(bv.values().begin(), bv.values().end(), out.data() + av.size());
  const size_t na = av.size();
  return tape.record(std::move(out), {a, b}, [a, b, na](Tape& t, Var self) {
    const auto& gy = t.grad(self);
    if (t.needs_grad(a)) {
      auto& g = t.grad(a);
      for (size_t i = 0; i < g.size(); ++i) g[i] += gy[i];
    }
    if (t.needs_grad(b)) {
      auto& g = t.grad(b);
      for (size_t i = 0; i < g.size(); ++i) g[i] += gy[na + i];
    }
  });
}

/// Reads F[:, pixel] for each flat pixel index (y*W + x) -> [C, M].
inline Var gather_pixels(Tape& tape, Var feature_map, std::vector<int> pixels) {
  const Tensor& fv = tape.value(feature_map);
  require_rank(fv, 3, "gather_pixels");
  const int C = fv.dim(0);
  const size_t plane = static_cast<size_t>(fv.dim(1)) * fv.dim(2);
  const int M = static_cast<int>(pixels.size());
  Tensor out({C, M});
  for (int c = 0; c < C; ++c)
    for (int j = 0; j < M; ++j) {
      if (pixels[j] < 0 || static_cast<size_t>(pixels[j]) >= plane) throw ShapeError("gather_pixels: index out of range");
      out[static_cast<size_t>(c) * M + j] = fv[c * plane + pixels[j]];
    }
  return tape.record(std::move(out), {feature_map},
                     [feature_map, pixels = std::move(pixels), C, M, plane](Tape& t, Var self) {
                       const auto& gy = t.grad(self);
                       auto& g = t.grad(feature_map);
                       for (int c = 0; c < C; ++c)
                         for (int j = 0; j < M; ++j) g[c * plane + pixels[j]] += gy[static_cast<size_t>(c) * M + j];
                     });
}

enum class Reduction { mean, sum };

/// L1 distance to a constant target, reduced to a scalar.
inline Var l1_loss(Tape& tape, Var x, const Tensor& target, Reduction red = Reduction::mean) {
  const Tensor& xv = tape.value(x);
  require_same_shape(xv, target, "l1_loss");
  double s = 0;
  for (size_t i = 0; i < xv.size(); ++i) s += std::abs(static_cast<double>(xv[i]) - target[i]);
  const double scale = red == Reduction::mean ? 1.0 / static_cast<double>(xv.size()) : 1.0;
  Tensor out({1}, static_cast<float>(s * scale));
  Buffer sign(xv.size());
  for (size_t i = 0; i < xv.size(); ++i)
    sign[i] = xv[i] > target[i] ? 1.0f : (xv[i] < target[i] ? -1.0f : 0.0f);
  return tape.record(std::move(out), {x}, [x, sign = std::move(sign), scale](Tape& t, Var self) {
    const float gy = t.grad(self)[0] * static_cast<float>(scale);
    auto& g = t.grad(x);
    for (size_t i = 0; i < g.size(); ++i) g[i] += gy * sign[i];
  });
}

/// mean((x - c)^2) over every element.
inline Var mean_squared_to(Tape& tape, Var x, float c) {
  const Tensor& xv = tape.value(x);
  double s = 0;
  for (float v : xv.values()) s += (static_cast<double>(v) - c) * (static_cast<double>(v) - c);
  const double n = static_cast<double>(xv.size());
  Tensor out({1}, static_cast<float>(s / n));
  return tape.record(std::move(out), {x}, [x, c, n](Tape& t, Var self) {
    const float gy = t.grad(self)[0];
    const Tensor& xv = t.value(x);
    auto& g = t.grad(x);
    const float k = static_cast<float>(2.0 / n) * gy;
    for (size_t i = 0; i < g.size(); ++i) g[i] += k * (xv[i] - c);
  });
}

/// sum_k weights[k] * terms[k] for scalar terms.
inline Var weighted_sum(Tape& tape, const std::vector<std::pair<float, Var>>& terms) {
  double s = 0;
  std::vector<Var> inputs;
  for (const auto& [w, v] : terms) {
    if (tape.value(v).size() != 1) throw ShapeError("weighted_sum expects scalars");
    s += static_cast<double>(w) * tape.value(v)[0];
    inputs.push_back(v);
  }
  return tape.record(Tensor({1}, static_cast<float>(s)), inputs, [terms](Tape& t, Var self) {
    const float gy = t.grad(self)[0];
    for (const auto& [w, v] : terms)
      if (t.needs_grad(v)) t.grad(v)[0] += w * gy;
  });
}

}  // namespace nstrokes::ops
