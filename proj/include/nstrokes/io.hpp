#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "nstrokes/curves.hpp"
#include "nstrokes/geometry.hpp"
#include "nstrokes/params.hpp"
#include "nstrokes/rasterizer.hpp"
#include "nstrokes/tensor.hpp"

namespace nstrokes::io {

using json = nlohmann::json;

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write " + path.string());
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw DataError("write failed: " + path.string());
}

/// Little-endian byte sink.
class ByteWriter {
 public:
  void raw(const void* p, size_t n) { buf_.append(static_cast<const char*>(p), n); }
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void floats(std::span<const float> v) {
    if constexpr (std::endian::native == std::endian::little) {
      raw(v.data(), v.size() * sizeof(float));
    } else {
      for (float x : v) f32(x);
    }
  }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  std::string& bytes() { return buf_; }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::string buf_;
};

/// Little-endian byte source; every failure names the byte offset.
class ByteReader {
 public:
  ByteReader(const std::string& buf, std::string what) : buf_(buf), what_(std::move(what)) {}

  size_t offset() const { return off_; }
  size_t remaining() const { return buf_.size() - off_; }

  [[noreturn]] void fail(const std::string& msg) const {
    throw DataError(what_ + ": " + msg + " at offset " + std::to_string(off_));
  }
  void need(size_t n, const char* field) const {
    if (remaining() < n)
      fail("truncated while reading " + std::string(field) + " (need " + std::to_string(n) + " bytes, " +
           std::to_string(remaining()) + " left)");
  }
  std::string raw(size_t n, const char* field) {
    need(n, field);
    std::string s = buf_.substr(off_, n);
    off_ += n;
    return s;
  }
  std::uint8_t u8(const char* field) { return static_cast<std::uint8_t>(get(1, field)); }
  std::uint16_t u16(const char* field) { return static_cast<std::uint16_t>(get(2, field)); }
  std::uint32_t u32(const char* field) { return static_cast<std::uint32_t>(get(4, field)); }
  std::uint64_t u64(const char* field) { return get(8, field); }
  float f32(const char* field) { return std::bit_cast<float>(u32(field)); }
  double f64(const char* field) { return std::bit_cast<double>(u64(field)); }
  void floats(float* dst, size_t n, const char* field) {
    if (n > remaining() / sizeof(float)) need(n * sizeof(float), field);
    if constexpr (std::endian::native == std::endian::little) {
      std::memcpy(dst, buf_.data() + off_, n * sizeof(float));
      off_ += n * sizeof(float);
    } else {
      for (size_t i = 0; i < n; ++i) dst[i] = f32(field);
    }
  }
  std::string str(const char* field) { return raw(u32(field), field); }

 private:
  std::uint64_t get(int n, const char* field) {
    need(static_cast<size_t>(n), field);
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[off_ + i])) << (8 * i);
    off_ += static_cast<size_t>(n);
    return v;
  }
  const std::string& buf_;
  std::string what_;
  size_t off_ = 0;
};

// ---------------------------------------------------------------- feature stacks

inline constexpr std::uint16_t kFeatureStackVersion = 1;
inline constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 32;

/// Names for the nine channels of V; the curve raster is ink = 1.
inline std::vector<std::string> default_view_channel_names() {
  return {"depth",
          "radial_curvature",
          "radial_curvature_derivative",
          "max_principal_curvature",
          "min_principal_curvature",
          "view_dependent_curvature",
          "normal_dot_view",
          "diffuse_shading",
          "curve_raster"};
}

struct FeatureStack {
  Tensor data;  // [C,H,W]
  std::vector<std::string> channel_names;
  json footer = json::object();
};

// Layout: "NSFS" u16 version, u32 C, u32 H, u32 W, C*H*W float32 planar,
// then u32 length + UTF-8 JSON footer.
inline std::string encode_feature_stack(const Tensor& t, std::vector<std::string> names = {}) {
  require_rank(t, 3, "feature stack");
  if (names.empty()) {
    if (t.dim(0) == 9) {
      names = default_view_channel_names();
    } else {
      for (int c = 0; c < t.dim(0); ++c) names.push_back("channel_" + std::to_string(c));
    }
  }
  if (names.size() != static_cast<size_t>(t.dim(0))) throw DataError("feature stack: channel name count mismatch");
  json footer = {{"channels", names},
                 {"layout", "planar float32 little-endian, channel-major, row-major within channel"},
                 {"curve_raster_polarity", "ink=1 background=0"}};
  ByteWriter w;
  w.raw("NSFS", 4);
  w.u16(kFeatureStackVersion);
  for (int i = 0; i < 3; ++i) w.u32(static_cast<std::uint32_t>(t.dim(i)));
  w.floats(t.values());
  w.str(footer.dump());
  return std::move(w.bytes());
}

inline FeatureStack decode_feature_stack(const std::string& bytes, const std::string& what = "feature stack") {
  ByteReader r(bytes, what);
  if (r.raw(4, "magic") != "NSFS") throw DataError(what + ": bad magic (expected NSFS) at offset 0");
  const auto version = r.u16("version");
  if (version != kFeatureStackVersion)
    throw DataError(what + ": unsupported version " + std::to_string(version) + " at offset 4");
  const std::uint64_t C = r.u32("C"), H = r.u32("H"), W = r.u32("W");
  if (C == 0 || H == 0 || W == 0) throw DataError(what + ": zero dimension in header at offset 6");
  if (C * H > kMaxElements || C * H * W > kMaxElements)
    throw DataError(what + ": dimension overflow " + std::to_string(C) + "x" + std::to_string(H) + "x" +
                    std::to_string(W));
  if (C > static_cast<std::uint64_t>(std::numeric_limits<int>::max()) ||
      H > static_cast<std::uint64_t>(std::numeric_limits<int>::max()) ||
      W > static_cast<std::uint64_t>(std::numeric_limits<int>::max()))
    throw DataError(what + ": dimension overflow");
  const size_t n = static_cast<size_t>(C * H * W);
  r.need(n * sizeof(float), "payload");
  FeatureStack fs;
  fs.data = Tensor({static_cast<int>(C), static_cast<int>(H), static_cast<int>(W)});
  r.floats(fs.data.data(), n, "payload");
  const size_t footer_at = r.offset();
  const std::string text = r.str("footer");
  try {
    fs.footer = json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(what + ": malformed JSON footer at offset " + std::to_string(footer_at) + ": " + e.what());
  }
  if (fs.footer.contains("channels")) fs.channel_names = fs.footer["channels"].get<std::vector<std::string>>();
  if (r.remaining() != 0) r.fail("trailing bytes after footer");
  return fs;
}

inline void write_feature_stack(const std::filesystem::path& path, const Tensor& t,
                                std::vector<std::string> names = {}) {
  write_file(path, encode_feature_stack(t, std::move(names)));
}

inline FeatureStack read_feature_stack(const std::filesystem::path& path) {
  return decode_feature_stack(read_file(path), path.string());
}

// ---------------------------------------------------------------- PGM / PPM

namespace detail {

inline std::string pnm_token(const std::string& b, size_t& i, const std::string& what) {
  while (i < b.size()) {
    if (b[i] == '#') {
      while (i < b.size() && b[i] != '\n') ++i;
    } else if (std::isspace(static_cast<unsigned char>(b[i]))) {
      ++i;
    } else {
      break;
    }
  }
  const size_t start = i;
  while (i < b.size() && !std::isspace(static_cast<unsigned char>(b[i])) && b[i] != '#') ++i;
  if (start == i) throw DataError(what + ": truncated header at offset " + std::to_string(start));
  return b.substr(start, i - start);
}

inline int pnm_int(const std::string& b, size_t& i, const std::string& what, const char* field) {
  const size_t at = i;
  const std::string tok = pnm_token(b, i, what);
  if (tok.empty() || tok.size() > 9 || !std::all_of(tok.begin(), tok.end(), [](char c) { return c >= '0' && c <= '9'; }))
    throw DataError(what + ": bad " + field + " '" + tok + "' near offset " + std::to_string(at));
  return std::stoi(tok);
}

}  // namespace detail

/// Binary P5 -> [1,H,W], P6 -> [3,H,W], values /255.
inline Tensor decode_image(const std::string& b, const std::string& what = "image") {
  size_t i = 0;
  const std::string magic = detail::pnm_token(b, i, what);
  int C = 0;
  if (magic == "P5") {
    C = 1;
  } else if (magic == "P6") {
    C = 3;
  } else {
    throw DataError(what + ": unsupported image magic '" + magic + "' (only binary P5/P6)");
  }
  const int W = detail::pnm_int(b, i, what, "width");
  const int H = detail::pnm_int(b, i, what, "height");
  const int maxval = detail::pnm_int(b, i, what, "maxval");
  if (W < 1 || H < 1) throw DataError(what + ": zero image dimension");
  if (maxval != 255) throw DataError(what + ": unsupported maxval " + std::to_string(maxval) + " (only 255)");
  if (i >= b.size() || !std::isspace(static_cast<unsigned char>(b[i])))
    throw DataError(what + ": truncated header at offset " + std::to_string(i));
  ++i;
  const size_t n = static_cast<size_t>(W) * H * C;
  if (b.size() - i < n)
    throw DataError(what + ": truncated pixel data at offset " + std::to_string(b.size()) + " (expected " +
                    std::to_string(n) + " bytes from offset " + std::to_string(i) + ")");
  Tensor t({C, H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < C; ++c)
        t.at(c, y, x) = static_cast<float>(static_cast<unsigned char>(b[i + (static_cast<size_t>(y) * W + x) * C + c])) / 255.0f;
  return t;
}

inline std::string encode_image(const Tensor& t) {
  require_rank(t, 3, "image");
  const int C = t.dim(0), H = t.dim(1), W = t.dim(2);
  if (C != 1 && C != 3) throw DataError("image: expected 1 or 3 channels, got " + std::to_string(C));
  std::string out = (C == 1 ? "P5\n" : "P6\n") + std::to_string(W) + " " + std::to_string(H) + "\n255\n";
  const size_t header = out.size();
  out.resize(header + static_cast<size_t>(W) * H * C);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < C; ++c) {
        const float v = t.at(c, y, x);
        const float q = std::isfinite(v) ? std::clamp(v, 0.0f, 1.0f) : 0.0f;
        out[header + (static_cast<size_t>(y) * W + x) * C + c] = static_cast<char>(static_cast<unsigned char>(std::lround(q * 255.0f)));
      }
  return out;
}

inline Tensor read_image(const std::filesystem::path& path) { return decode_image(read_file(path), path.string()); }
inline void write_image(const std::filesystem::path& path, const Tensor& t) { write_file(path, encode_image(t)); }

// ---------------------------------------------------------------- curve JSON

struct CurveFile {
  int width = 0;
  int height = 0;
  CurveSet curves;
};

inline void validate_curves(const CurveFile& cf, const std::string& what) {
  if (cf.width < 1 || cf.height < 1) throw DataError(what + ": width and height must be positive");
  for (size_t i = 0; i < cf.curves.paths.size(); ++i) {
    const auto& pts = cf.curves.paths[i].points;
    if (pts.size() < 2) throw DataError(what + ": path " + std::to_string(i) + " has fewer than 2 points");
    for (size_t j = 0; j < pts.size(); ++j) {
      const Vec2 p = pts[j];
      if (!(p.x >= 0.0 && p.x <= cf.width && p.y >= 0.0 && p.y <= cf.height))
        throw DataError(what + ": path " + std::to_string(i) + " point " + std::to_string(j) + " outside the canvas");
    }
  }
}

inline CurveFile parse_curves(const std::string& text, const std::string& what = "curves") {
  CurveFile cf;
  try {
    const json j = json::parse(text);
    cf.width = j.at("width").get<int>();
    cf.height = j.at("height").get<int>();
    for (const auto& p : j.at("paths")) {
      Polyline pl;
      for (const auto& pt : p.at("points")) {
        if (!pt.is_array() || pt.size() != 2) throw DataError(what + ": point must be [x, y]");
        pl.points.push_back({pt[0].get<double>(), pt[1].get<double>()});
      }
      cf.curves.paths.push_back(std::move(pl));
    }
  } catch (const json::exception& e) {
    throw DataError(what + ": " + e.what());
  }
  validate_curves(cf, what);
  return cf;
}

inline std::string dump_curves(const CurveFile& cf) {
  validate_curves(cf, "curves");
  json paths = json::array();
  for (const auto& p : cf.curves.paths) {
    json pts = json::array();
    for (const auto& q : p.points) pts.push_back({q.x, q.y});
    paths.push_back({{"points", std::move(pts)}});
  }
  return json{{"width", cf.width}, {"height", cf.height}, {"paths", std::move(paths)}}.dump() + "\n";
}

inline CurveFile read_curves(const std::filesystem::path& path) { return parse_curves(read_file(path), path.string()); }
inline void write_curves(const std::filesystem::path& path, const CurveFile& cf) { write_file(path, dump_curves(cf)); }

// ---------------------------------------------------------------- checkpoints

inline constexpr std::uint16_t kCheckpointVersion = 1;

struct Checkpoint {
  ParamStore params;
  json config = json::object();  // echo of the producing run; includes "iteration"
};

// Layout: "NSCK" u16 version, u32-length JSON config, u32 parameter count,
// then per parameter (name order): name, u32 rank, u32 dims, float32 values,
// u64 adam steps, f64 lr/beta1/beta2/eps, u64 moment length, m, v.
inline std::string encode_checkpoint(const ParamStore& params, const json& config) {
  ByteWriter w;
  w.raw("NSCK", 4);
  w.u16(kCheckpointVersion);
  w.str(config.dump());
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, p] : params) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(p.value.rank()));
    for (int d : p.value.shape()) w.u32(static_cast<std::uint32_t>(d));
    w.floats(p.value.values());
    w.u64(p.adam.step_count);
    w.f64(p.adam.lr);
    w.f64(p.adam.beta1);
    w.f64(p.adam.beta2);
    w.f64(p.adam.eps);
    if (p.adam.m.size() != p.adam.v.size()) throw DataError("checkpoint: inconsistent optimizer moments for " + name);
    w.u64(p.adam.m.size());
    w.floats(p.adam.m);
    w.floats(p.adam.v);
  }
  return std::move(w.bytes());
}

inline Checkpoint decode_checkpoint(const std::string& bytes, const std::string& what = "checkpoint") {
  ByteReader r(bytes, what);
  if (r.raw(4, "magic") != "NSCK") throw DataError(what + ": bad magic (expected NSCK) at offset 0");
  const auto version = r.u16("version");
  if (version != kCheckpointVersion)
    throw DataError(what + ": unsupported version " + std::to_string(version) + " at offset 4");
  Checkpoint ck;
  const size_t cfg_at = r.offset();
  const std::string cfg = r.str("config");
  try {
    ck.config = json::parse(cfg);
  } catch (const json::exception& e) {
    throw DataError(what + ": malformed config JSON at offset " + std::to_string(cfg_at) + ": " + e.what());
  }
  const std::uint32_t count = r.u32("parameter count");
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::string name = r.str("parameter name");
    const std::uint32_t rank = r.u32("rank");
    if (rank > 8) r.fail("implausible rank " + std::to_string(rank) + " for " + name);
    Shape shape;
    std::uint64_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const std::uint32_t v = r.u32("dimension");
      if (v == 0 || v > static_cast<std::uint32_t>(std::numeric_limits<int>::max())) r.fail("bad dimension for " + name);
      n *= v;
      if (n > kMaxElements) r.fail("dimension overflow for " + name);
      shape.push_back(static_cast<int>(v));
    }
    Tensor value(shape);
    r.floats(value.data(), value.size(), "parameter values");
    AdamHyper h;
    const std::uint64_t steps = r.u64("adam steps");
    h.lr = r.f64("lr");
    h.beta1 = r.f64("beta1");
    h.beta2 = r.f64("beta2");
    h.eps = r.f64("eps");
    const std::uint64_t mlen = r.u64("moment length");
    if (mlen != 0 && mlen != value.size()) r.fail("moment length does not match parameter " + name);
    ck.params.add(name, std::move(value), h);
    Parameter& p = ck.params.entry(name);
    p.adam.step_count = steps;
    p.adam.m.resize(mlen);
    p.adam.v.resize(mlen);
    r.floats(p.adam.m.data(), mlen, "adam m");
    r.floats(p.adam.v.data(), mlen, "adam v");
  }
  if (r.remaining() != 0) r.fail("trailing bytes");
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const ParamStore& params, const json& config) {
  write_file(path, encode_checkpoint(params, config));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path), path.string());
}

// ---------------------------------------------------------------- SVG

namespace detail {

inline std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string short_num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

// Per-point normals of the displaced centerline; falls back to the base
// curve where displaced neighbours coincide.
inline std::vector<Vec2> outline_normals(const Polyline& displaced, const Polyline& base) {
  try {
    return frames(displaced).normal;
  } catch (const DataError&) {
    return frames(base).normal;
  }
}

}  // namespace detail

/// Closed outline of one stroke: left offsets forward, right offsets back.
inline std::vector<Vec2> stroke_outline(const StrokeSet& s, size_t i) {
  const Polyline& base = s.base.paths[i];
  Polyline disp = base;
  for (size_t j = 0; j < disp.points.size(); ++j) disp.points[j] += s.displacement[i][j];
  const auto n = detail::outline_normals(disp, base);
  std::vector<Vec2> out;
  const size_t m = disp.points.size();
  for (size_t j = 0; j < m; ++j) out.push_back(disp.points[j] + (0.5 * s.thickness[i][j]) * n[j]);
  for (size_t j = m; j-- > 0;) out.push_back(disp.points[j] - (0.5 * s.thickness[i][j]) * n[j]);
  return out;
}

inline std::string encode_svg(const StrokeSet& s, int width, int height) {
  s.validate();
  std::string out = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) + "\" height=\"" +
         std::to_string(height) + "\" viewBox=\"0 0 " + std::to_string(width) + " " + std::to_string(height) +
         "\" data-nstrokes-version=\"1\">\n";
  out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (size_t i = 0; i < s.path_count(); ++i) {
    const auto& pts = s.base.paths[i].points;
    std::string raw;
    for (size_t j = 0; j < pts.size(); ++j) {
      if (j) raw += ';';
      raw += detail::num(pts[j].x) + ',' + detail::num(pts[j].y) + ',' + detail::num(s.displacement[i][j].x) + ',' +
             detail::num(s.displacement[i][j].y) + ',' + detail::num(s.thickness[i][j]);
    }
    out += "<g class=\"stroke\" data-stroke=\"" + raw + "\">";
    const bool visible = std::any_of(s.thickness[i].begin(), s.thickness[i].end(), [](double t) { return t > 0.0; });
    if (visible && pts.size() >= 2) {
      out += "<polygon fill=\"black\" stroke=\"none\" points=\"";
      const auto poly = stroke_outline(s, i);
      for (size_t k = 0; k < poly.size(); ++k) {
        if (k) out += ' ';
        out += detail::short_num(poly[k].x) + ',' + detail::short_num(poly[k].y);
      }
      out += "\"/>";
    }
    out += "</g>\n";
  }
  out += "</svg>\n";
  return out;
}

/// Rebuilds the StrokeSet from the embedded per-point records.
inline StrokeSet decode_svg(const std::string& text, const std::string& what = "svg") {
  StrokeSet s;
  const std::string key = "data-stroke=\"";
  size_t pos = 0;
  while ((pos = text.find(key, pos)) != std::string::npos) {
    const size_t begin = pos + key.size();
    const size_t end = text.find('"', begin);
    if (end == std::string::npos) throw DataError(what + ": unterminated stroke data at offset " + std::to_string(begin));
    const std::string raw = text.substr(begin, end - begin);
    Polyline p;
    std::vector<Vec2> d;
    std::vector<double> t;
    const char* c = raw.c_str();
    const char* stop = c + raw.size();
    while (c < stop) {
      double v[5];
      for (int k = 0; k < 5; ++k) {
        char* next = nullptr;
        v[k] = std::strtod(c, &next);
        if (next == c)
          throw DataError(what + ": malformed stroke data at offset " + std::to_string(begin + static_cast<size_t>(c - raw.c_str())));
        c = next;
        const char want = k < 4 ? ',' : ';';
        if (c < stop) {
          if (*c != want)
            throw DataError(what + ": malformed stroke data at offset " + std::to_string(begin + static_cast<size_t>(c - raw.c_str())));
          ++c;
        } else if (k < 4) {
          throw DataError(what + ": truncated stroke record at offset " + std::to_string(end));
        }
      }
      p.points.push_back({v[0], v[1]});
      d.push_back({v[2], v[3]});
      t.push_back(v[4]);
    }
    s.base.paths.push_back(std::move(p));
    s.displacement.push_back(std::move(d));
    s.thickness.push_back(std::move(t));
    pos = end;
  }
  s.validate();
  return s;
}

inline void export_svg(const std::filesystem::path& path, const StrokeSet& s, int width, int height) {
  write_file(path, encode_svg(s, width, height));
}

inline StrokeSet import_svg(const std::filesystem::path& path) { return decode_svg(read_file(path), path.string()); }

// ---------------------------------------------------------------- stroke textures

/// RGBA map in stroke coordinates: column = arc length (u), row = normal
/// offset (v) from -T/2 to +T/2 where T is the stroke's maximum thickness.
struct StrokeTexture {
  Tensor rgba;  // [4, rows, cols]
  double max_thickness = 0.0;
  double length = 0.0;
};

namespace detail {

struct Centerline {
  std::vector<Vec2> points, normals;
  std::vector<double> thickness, arclen;  // arclen: cumulative px
};

inline Centerline centerline(const StrokeSet& s, size_t i) {
  Centerline c;
  const Polyline& base = s.base.paths[i];
  Polyline disp = base;
  for (size_t j = 0; j < disp.points.size(); ++j) disp.points[j] += s.displacement[i][j];
  c.points = disp.points;
  c.normals = outline_normals(disp, base);
  c.thickness = s.thickness[i];
  c.arclen.assign(c.points.size(), 0.0);
  for (size_t j = 1; j < c.points.size(); ++j) c.arclen[j] = c.arclen[j - 1] + distance(c.points[j - 1], c.points[j]);
  return c;
}

struct CenterSample {
  Vec2 point, normal;
  double thickness;
};

inline CenterSample sample_centerline(const Centerline& c, double a) {
  const auto it = std::upper_bound(c.arclen.begin(), c.arclen.end(), a);
  size_t j = it == c.arclen.begin() ? 0 : static_cast<size_t>(it - c.arclen.begin()) - 1;
  j = std::min(j, c.points.size() - 2);
  const double seg = c.arclen[j + 1] - c.arclen[j];
  const double w = seg > 0 ? std::clamp((a - c.arclen[j]) / seg, 0.0, 1.0) : 0.0;
  Vec2 n = (1 - w) * c.normals[j] + w * c.normals[j + 1];
  const double len = norm(n);
  n = len > 0 ? (1.0 / len) * n : c.normals[j];
  return {(1 - w) * c.points[j] + w * c.points[j + 1], n, (1 - w) * c.thickness[j] + w * c.thickness[j + 1]};
}

}  // namespace detail

/// Samples I into per-stroke (u, v) maps of ceil(length) x ceil(max t)
/// texels; texels outside the local stroke width are fully transparent.
inline std::vector<StrokeTexture> bake_stroke_textures(const StrokeSet& s, const Tensor& image) {
  s.validate();
  require_rank(image, 3, "bake_stroke_textures");
  if (image.dim(0) != 3) throw ShapeError("bake_stroke_textures: expected an RGB image");
  const int H = image.dim(1), W = image.dim(2);
  std::vector<StrokeTexture> out;
  for (size_t i = 0; i < s.path_count(); ++i) {
    StrokeTexture tex;
    if (s.base.paths[i].points.size() < 2) {
      tex.rgba = Tensor({4, 1, 1});
      out.push_back(std::move(tex));
      continue;
    }
    const auto c = detail::centerline(s, i);
    tex.length = c.arclen.back();
    tex.max_thickness = *std::max_element(c.thickness.begin(), c.thickness.end());
    const int cols = std::max(1, static_cast<int>(std::ceil(tex.length)));
    const int rows = std::max(1, static_cast<int>(std::ceil(tex.max_thickness)));
    tex.rgba = Tensor({4, rows, cols});
    for (int a = 0; a < cols; ++a) {
      const auto cs = detail::sample_centerline(c, (a + 0.5) / cols * tex.length);
      for (int b = 0; b < rows; ++b) {
        const double v = ((b + 0.5) / rows - 0.5) * tex.max_thickness;
        if (std::abs(v) > 0.5 * cs.thickness) continue;
        const Vec2 q = cs.point + v * cs.normal;
        const int idx = nearest_pixel(q, W, H);
        for (int ch = 0; ch < 3; ++ch) tex.rgba.at(ch, b, a) = image[static_cast<size_t>(ch) * H * W + idx];
        tex.rgba.at(3, b, a) = 1.0f;
      }
    }
    out.push_back(std::move(tex));
  }
  return out;
}

/// Inverse of bake: each pixel whose centre lies within half the local
/// width of a stroke takes the texel at its (u, v); the nearest stroke wins.
/// Returns [3,H,W] over `background` plus a [1,H,W] stroke-pixel mask.
inline std::pair<Tensor, Tensor> paint_stroke_textures(const StrokeSet& s, const std::vector<StrokeTexture>& tex,
                                                       const Tensor& background) {
  s.validate();
  require_rank(background, 3, "paint_stroke_textures");
  if (background.dim(0) != 3) throw ShapeError("paint_stroke_textures: expected an RGB background");
  if (tex.size() != s.path_count()) throw DataError("paint_stroke_textures: one texture per stroke required");
  const int H = background.dim(1), W = background.dim(2);
  Tensor out = background;
  Tensor mask({1, H, W});
  std::vector<double> best(static_cast<size_t>(H) * W, std::numeric_limits<double>::infinity());
  for (size_t i = 0; i < s.path_count(); ++i) {
    if (s.base.paths[i].points.size() < 2 || tex[i].length <= 0.0) continue;
    const auto c = detail::centerline(s, i);
    const Tensor& t = tex[i].rgba;
    const int rows = t.dim(1), cols = t.dim(2);
    for (size_t j = 0; j + 1 < c.points.size(); ++j) {
      const Vec2 a = c.points[j], b = c.points[j + 1];
      if (a == b) continue;
      const double reach = 0.5 * std::max(c.thickness[j], c.thickness[j + 1]) + 1.0;
      const int x0 = std::max(0, static_cast<int>(std::floor(std::min(a.x, b.x) - reach)));
      const int x1 = std::min(W - 1, static_cast<int>(std::ceil(std::max(a.x, b.x) + reach)));
      const int y0 = std::max(0, static_cast<int>(std::floor(std::min(a.y, b.y) - reach)));
      const int y1 = std::min(H - 1, static_cast<int>(std::ceil(std::max(a.y, b.y) + reach)));
      for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
          const Vec2 p{x + 0.5, y + 0.5};
          const auto cp = closest_point(p, a, b);
          const double half = 0.5 * ((1 - cp.u) * c.thickness[j] + cp.u * c.thickness[j + 1]);
          const size_t k = static_cast<size_t>(y) * W + x;
          if (cp.distance > half || cp.distance >= best[k]) continue;
          const double arc = c.arclen[j] + cp.u * (c.arclen[j + 1] - c.arclen[j]);
          const auto cs = detail::sample_centerline(c, arc);
          const double v = dot(p - cs.point, cs.normal);
          const int col = std::clamp(static_cast<int>(std::floor(arc / tex[i].length * cols)), 0, cols - 1);
          const int row = tex[i].max_thickness > 0
                              ? std::clamp(static_cast<int>(std::floor((v / tex[i].max_thickness + 0.5) * rows)), 0, rows - 1)
                              : 0;
          if (t.at(3, row, col) <= 0.0f) continue;
          best[k] = cp.distance;
          for (int ch = 0; ch < 3; ++ch) out.at(ch, y, x) = t.at(ch, row, col);
          mask[k] = 1.0f;
        }
    }
  }
  return {std::move(out), std::move(mask)};
}

}  // namespace nstrokes::io
