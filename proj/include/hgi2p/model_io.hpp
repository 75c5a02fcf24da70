#pragma once

// Binary model files.
//
//   "HGI2P\0"  u32 version
//   u32 length, UTF-8 metadata as "key=value" lines
//   u32 matrix count, then per matrix:
//     u32 name length, name, u32 rows, u32 cols, rows*cols f64 row-major
//
// Integers and floats are little-endian.

#include <Eigen/Dense>

#include <array>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "hgi2p/error.hpp"
#include "hgi2p/model.hpp"

namespace hgi2p {

inline constexpr std::array<char, 6> kModelMagic = {'H', 'G', 'I', '2', 'P', '\0'};
inline constexpr std::uint32_t kModelVersion = 1;

namespace detail {

static_assert(std::endian::native == std::endian::little, "model files assume a little-endian host");

inline std::string format_double(double v) {
  std::array<char, 32> buf{};
  const auto r = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), r.ptr);
}

inline double parse_double(const std::string& s, const std::string& what) {
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw Error(ErrorCode::ParseError, what + ": bad number '" + s + "'");
  return v;
}

inline int parse_int(const std::string& s, const std::string& what) {
  int v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw Error(ErrorCode::ParseError, what + ": bad integer '" + s + "'");
  return v;
}

class ByteWriter {
 public:
  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void f64(double v) { raw(&v, sizeof v); }
  void bytes(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  void raw(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
  const std::string& str() const { return out_; }

 private:
  std::string out_;
};

class ByteReader {
 public:
  ByteReader(const std::string& data, std::string source) : data_(data), source_(std::move(source)) {}

  void raw(void* p, std::size_t n) {
    if (data_.size() - pos_ < n) fail("truncated");
    std::memcpy(p, data_.data() + pos_, n);
    pos_ += n;
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    raw(&v, sizeof v);
    return v;
  }
  double f64() {
    double v = 0.0;
    raw(&v, sizeof v);
    return v;
  }
  std::string bytes() {
    const std::uint32_t n = u32();
    if (data_.size() - pos_ < n) fail("truncated string");
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == data_.size(); }

  [[noreturn]] void fail(const std::string& what) const {
    throw Error(ErrorCode::ParseError, source_ + " at byte " + std::to_string(pos_) + ": " + what);
  }

 private:
  const std::string& data_;
  std::string source_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize_model(const Model& model) {
  std::ostringstream meta;
  meta << "version=" << kModelVersion << '\n'
       << "m_max=" << model.mp.m_max << '\n'
       << "n_max=" << model.mp.n_max << '\n'
       << "channels=" << model.he.channels << '\n'
       << "alpha=" << detail::format_double(model.alpha) << '\n'
       << "beta=" << detail::format_double(model.he.beta) << '\n'
       << "tau2d=" << detail::format_double(model.tau2d) << '\n'
       << "neighbor_attention=" << (model.he.neighbor_attention ? 1 : 0) << '\n';

  detail::ByteWriter w;
  w.raw(kModelMagic.data(), kModelMagic.size());
  w.u32(kModelVersion);
  w.bytes(meta.str());
  const auto mats = model.matrices();
  w.u32(static_cast<std::uint32_t>(mats.size()));
  for (std::size_t i = 0; i < mats.size(); ++i) {
    const Eigen::MatrixXd& m = *mats[i];
    w.bytes(Model::kMatrixNames[i]);
    w.u32(static_cast<std::uint32_t>(m.rows()));
    w.u32(static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) w.f64(m(r, c));
  }
  return w.str();
}

inline Model parse_model(const std::string& data, const std::string& source = "<memory>") {
  detail::ByteReader r(data, source);
  std::array<char, 6> magic{};
  r.raw(magic.data(), magic.size());
  if (magic != kModelMagic) r.fail("not a model file");
  if (const auto v = r.u32(); v != kModelVersion) r.fail("unsupported version " + std::to_string(v));

  std::map<std::string, std::string> meta;
  {
    std::istringstream in(r.bytes());
    for (std::string line; std::getline(in, line);) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) r.fail("metadata line without '='");
      meta[line.substr(0, eq)] = line.substr(eq + 1);
    }
  }
  auto field = [&](const std::string& key) {
    const auto it = meta.find(key);
    if (it == meta.end()) r.fail("metadata lacks '" + key + "'");
    return it->second;
  };
  const int m_max = detail::parse_int(field("m_max"), source);
  const int n_max = detail::parse_int(field("n_max"), source);
  const int channels = detail::parse_int(field("channels"), source);
  if (m_max <= 0 || n_max <= 0 || channels <= 0) r.fail("non-positive model dimensions");

  Model model = Model::identity(m_max, n_max, channels, detail::parse_double(field("beta"), source));
  model.alpha = detail::parse_double(field("alpha"), source);
  model.tau2d = detail::parse_double(field("tau2d"), source);
  model.he.neighbor_attention = field("neighbor_attention") == "1";

  const auto mats = model.matrices();
  if (r.u32() != mats.size()) r.fail("unexpected matrix count");
  for (std::size_t i = 0; i < mats.size(); ++i) {
    Eigen::MatrixXd& m = *mats[i];
    if (r.bytes() != Model::kMatrixNames[i]) r.fail(std::string("expected matrix ") + Model::kMatrixNames[i]);
    const std::uint32_t rows = r.u32();
    const std::uint32_t cols = r.u32();
    if (rows != m.rows() || cols != m.cols()) r.fail(std::string("shape of ") + Model::kMatrixNames[i]);
    for (Eigen::Index a = 0; a < m.rows(); ++a)
      for (Eigen::Index b = 0; b < m.cols(); ++b) m(a, b) = r.f64();
  }
  if (!r.done()) r.fail("trailing bytes");
  return model;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

inline void save_model(const Model& model, const std::filesystem::path& path) {
  write_file(path, serialize_model(model));
}

inline Model load_model(const std::filesystem::path& path) { return parse_model(read_file(path), path.string()); }

}  // namespace hgi2p
