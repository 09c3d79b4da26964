#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstddef>
#include <functional>
#include <new>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "nstrokes/error.hpp"

namespace nstrokes {

using Shape = std::vector<int>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

inline size_t shape_numel(const Shape& s) {
  size_t n = 1;
  for (int d : s) {
    if (d < 0) throw ShapeError("negative dimension in " + shape_str(s));
    n *= static_cast<size_t>(d);
  }
  return n;
}

/// Allocator returning 64-byte aligned blocks, so vectorized kernels see the
/// same alignment (and rounding) on every run.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};
  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) {}
  T* allocate(size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, size_t) { ::operator delete(p, kAlign); }
  friend bool operator==(const AlignedAllocator&, const AlignedAllocator&) { return true; }
};

using Buffer = std::vector<float, AlignedAllocator<float>>;

/// True when no element is inf or nan (exponent bits all ones).
inline bool all_finite(std::span<const float> v) {
  std::uint32_t bad = 0;
  for (float f : v) {
    const auto bits = std::bit_cast<std::uint32_t>(f);
    bad |= static_cast<std::uint32_t>((bits & 0x7f800000u) == 0x7f800000u);
  }
  return bad == 0;
}

/// Dense row-major float32 array with an optional gradient buffer of the
/// same shape. Values are planar: a [C,H,W] tensor stores channel 0 first.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f)
      : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}
  Tensor(Shape shape, const std::vector<float>& data) : Tensor(std::move(shape), Buffer(data.begin(), data.end())) {}
  Tensor(Shape shape, Buffer data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_numel(shape_))
      throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " +
                       shape_str(shape_));
  }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
  size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  std::span<float> values() { return data_; }
  std::span<const float> values() const { return data_; }
  Buffer& storage() { return data_; }
  const Buffer& storage() const { return data_; }

  float& operator[](size_t i) { return data_[i]; }
  const float& operator[](size_t i) const { return data_[i]; }

  float& at(int c, int y, int x) { return data_[(static_cast<size_t>(c) * shape_[1] + y) * shape_[2] + x]; }
  const float& at(int c, int y, int x) const {
    return data_[(static_cast<size_t>(c) * shape_[1] + y) * shape_[2] + x];
  }

  bool has_grad() const { return !grad_.empty(); }
  Buffer& grad() {
    if (grad_.size() != data_.size()) grad_.assign(data_.size(), 0.0f);
    return grad_;
  }
  const Buffer& grad() const { return grad_; }
  void zero_grad() {
    if (!grad_.empty()) std::fill(grad_.begin(), grad_.end(), 0.0f);
  }
  void drop_grad() { grad_.clear(); }

  void fill(float v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const { return nstrokes::all_finite(data_); }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  Buffer data_;
  Buffer grad_;
};

inline void require_rank(const Tensor& t, int rank, const char* what) {
  if (t.rank() != rank)
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(t.shape()));
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

inline void fill_normal(Tensor& t, std::mt19937_64& rng, float mean, float stddev) {
  std::normal_distribution<float> dist(mean, stddev);
  for (auto& v : t.values()) v = dist(rng);
}

inline void fill_uniform(Tensor& t, std::mt19937_64& rng, float lo, float hi) {
  std::uniform_real_distribution<float> dist(lo, hi);
  for (auto& v : t.values()) v = dist(rng);
}

/// Copies the window [y0, y0+h) x [x0, x0+w) of every channel of a [C,H,W] tensor.
inline Tensor crop(const Tensor& src, int x0, int y0, int w, int h) {
  require_rank(src, 3, "crop");
  if (x0 < 0 || y0 < 0 || x0 + w > src.dim(2) || y0 + h > src.dim(1))
    throw ShapeError("crop window outside tensor " + shape_str(src.shape()));
  Tensor out({src.dim(0), h, w});
  for (int c = 0; c < src.dim(0); ++c)
    for (int y = 0; y < h; ++y)
      std::copy_n(&src.at(c, y0 + y, x0), w, &out.at(c, y, 0));
  return out;
}

/// Channel slice [begin, begin+count) of a [C,H,W] tensor.
inline Tensor channels(const Tensor& src, int begin, int count) {
  require_rank(src, 3, "channels");
  if (begin < 0 || begin + count > src.dim(0)) throw ShapeError("channel slice out of range");
  const size_t plane = static_cast<size_t>(src.dim(1)) * src.dim(2);
  Tensor out({count, src.dim(1), src.dim(2)});
  std::copy_n(src.data() + plane * begin, plane * count, out.data());
  return out;
}

inline Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require_rank(a, 3, "concat_channels");
  require_rank(b, 3, "concat_channels");
  if (a.dim(1) != b.dim(1) || a.dim(2) != b.dim(2))
    throw ShapeError("concat_channels: spatial mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  Tensor out({a.dim(0) + b.dim(0), a.dim(1), a.dim(2)});
  std::copy(a.values().begin(), a.values().end(), out.data());
  std::copy(b.values().begin(), b.values().end(), out.data() + a.size());
  return out;
}

}  // namespace nstrokes
