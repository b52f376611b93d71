#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "lagr/tensor.hpp"

namespace lagr::io {

// LAGT1 tensor files: "LAGT1", four u32 LE dims (B,C,H,W), then B*C*H*W
// IEEE-754 f64 LE values, W fastest.

inline constexpr std::string_view kLagtMagic = "LAGT1";

namespace detail {
inline void put_u32(std::ostream& os, std::uint32_t v) {
  std::array<char, 4> b{};
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFFu);
  os.write(b.data(), 4);
}
inline void put_f64(std::ostream& os, double d) {
  const auto v = std::bit_cast<std::uint64_t>(d);
  std::array<char, 8> b{};
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFFu);
  os.write(b.data(), 8);
}
inline std::uint32_t get_u32(std::istream& is) {
  std::array<unsigned char, 4> b{};
  if (!is.read(reinterpret_cast<char*>(b.data()), 4)) throw FormatError("LAGT1: truncated header");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}
inline double get_f64(std::istream& is) {
  std::array<unsigned char, 8> b{};
  if (!is.read(reinterpret_cast<char*>(b.data()), 8)) throw FormatError("LAGT1: truncated payload");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return std::bit_cast<double>(v);
}
} // namespace detail

inline void write_lagt1(std::ostream& os, const Tensor& t) {
  const Shape s = t.shape();
  for (std::size_t d : {s.b, s.c, s.h, s.w})
    if (d > 0xFFFFFFFFu) throw FormatError("LAGT1: dimension exceeds 32 bits");
  os.write(kLagtMagic.data(), static_cast<std::streamsize>(kLagtMagic.size()));
  for (std::size_t d : {s.b, s.c, s.h, s.w}) detail::put_u32(os, static_cast<std::uint32_t>(d));
  for (double v : t.data()) detail::put_f64(os, v);
  if (!os) throw FormatError("LAGT1: write failed");
}

inline Tensor read_lagt1(std::istream& is) {
  std::array<char, 5> magic{};
  if (!is.read(magic.data(), 5) || std::string_view(magic.data(), 5) != kLagtMagic)
    throw FormatError("LAGT1: bad magic");
  Shape s;
  s.b = detail::get_u32(is);
  s.c = detail::get_u32(is);
  s.h = detail::get_u32(is);
  s.w = detail::get_u32(is);
  std::vector<double> data(s.size());
  for (double& v : data) v = detail::get_f64(is);
  return Tensor(s, std::move(data));
}

inline void save_lagt1(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  write_lagt1(os, t);
}

inline Tensor load_lagt1(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  return read_lagt1(is);
}

// PGM (P5, maxval 255) grayscale images mapped to [0,1] as a 1 x 1 x H x W field.

inline void write_pgm(std::ostream& os, const Tensor& img) {
  const Shape s = img.shape();
  if (s.b != 1 || s.c != 1) throw DimensionError("write_pgm: expects a 1x1xHxW field");
  os << "P5\n" << s.w << " " << s.h << "\n255\n";
  for (double v : img.data()) {
    const double c = std::clamp(v, 0.0, 1.0);
    os.put(static_cast<char>(static_cast<unsigned char>(std::lround(c * 255.0))));
  }
  if (!os) throw FormatError("PGM: write failed");
}

inline Tensor read_pgm(std::istream& is) {
  auto token = [&is]() {
    std::string tok;
    while (is) {
      const int c = is.peek();
      if (c == '#') {
        std::string skip;
        std::getline(is, skip);
      } else if (std::isspace(c)) {
        is.get();
      } else {
        break;
      }
    }
    is >> tok;
    return tok;
  };
  if (token() != "P5") throw FormatError("PGM: only binary P5 is supported");
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(token());
    h = std::stoul(token());
    maxval = std::stoul(token());
  } catch (const std::exception&) {
    throw FormatError("PGM: malformed header");
  }
  if (maxval == 0 || maxval > 255) throw FormatError("PGM: only 8-bit images are supported");
  is.get();  // single whitespace after maxval
  Tensor img({1, 1, h, w});
  for (double& v : img.data()) {
    const int c = is.get();
    if (c == EOF) throw FormatError("PGM: truncated pixel data");
    v = static_cast<double>(c) / static_cast<double>(maxval);
  }
  return img;
}

// Text helpers shared by the CSV/SVG emitters. Fixed printf formats keep the
// output byte-stable across runs.

inline std::string fmt(double v, int precision = 10) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", precision, v);
  return buf;
}

inline std::string fmt_fixed(double v, int decimals = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

/// Minimal CSV writer: ',' separator, '.' decimal point, LF line endings.
class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> header) : columns_(header.size()) { row(header); }

  void row(const std::vector<std::string>& cells) {
    if (cells.size() != columns_) throw FormatError("CSV: row width does not match header");
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out_ << ',';
      out_ << cells[i];
    }
    out_ << '\n';
  }

  std::string str() const { return out_.str(); }
  void save(const std::filesystem::path& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open " + path.string() + " for writing");
    os << out_.str();
  }

 private:
  std::size_t columns_;
  std::ostringstream out_;
};

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  os << text;
}

} // namespace lagr::io
