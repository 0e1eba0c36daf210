#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mind/flow_io.hpp"
#include "mind/tensor.hpp"

namespace mind {

// Binary PGM (P5) and PPM (P6) with maxval 255. Values map to [0,1] on read;
// grayscale replicates into all three channels.

namespace detail {

struct ByteCursor {
  const std::vector<std::uint8_t>& bytes;
  std::size_t pos = 0;
  std::string origin;

  [[noreturn]] void fail(const std::string& what) const {
    throw IoError(origin + ": " + what + " at byte " + std::to_string(pos));
  }

  int peek() const { return pos < bytes.size() ? bytes[pos] : -1; }

  void skip_space_and_comments() {
    while (pos < bytes.size()) {
      const std::uint8_t c = bytes[pos];
      if (c == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
        ++pos;
      } else {
        break;
      }
    }
  }

  int read_int() {
    skip_space_and_comments();
    if (pos >= bytes.size() || bytes[pos] < '0' || bytes[pos] > '9')
      fail("expected integer");
    long v = 0;
    while (pos < bytes.size() && bytes[pos] >= '0' && bytes[pos] <= '9') {
      v = v * 10 + (bytes[pos] - '0');
      if (v > 1 << 30) fail("integer overflow in header");
      ++pos;
    }
    return static_cast<int>(v);
  }
};

}  // namespace detail

inline Tensor decode_image(const std::vector<std::uint8_t>& bytes,
                           const std::string& origin = "<memory>") {
  detail::ByteCursor cur{bytes, 0, origin};
  if (bytes.size() < 2) cur.fail("not a PNM file");
  const char m0 = static_cast<char>(bytes[0]);
  const char m1 = static_cast<char>(bytes[1]);
  if (m0 != 'P' || (m1 != '5' && m1 != '6')) cur.fail("unsupported PNM magic");
  const bool color = m1 == '6';
  cur.pos = 2;
  const int w = cur.read_int();
  const int h = cur.read_int();
  const int maxval = cur.read_int();
  if (w <= 0 || h <= 0) cur.fail("bad dimensions");
  if (maxval != 255) cur.fail("unsupported maxval " + std::to_string(maxval));
  // exactly one whitespace byte separates the header from the payload
  if (cur.pos >= bytes.size() || !(bytes[cur.pos] == ' ' || bytes[cur.pos] == '\t' ||
                                   bytes[cur.pos] == '\r' || bytes[cur.pos] == '\n'))
    cur.fail("missing header terminator");
  ++cur.pos;

  const std::size_t need = static_cast<std::size_t>(w) * h * (color ? 3 : 1);
  if (bytes.size() - cur.pos < need) cur.fail("truncated payload");
  if (bytes.size() - cur.pos > need) cur.fail("trailing bytes after payload");

  Tensor t(1, 3, h, w);
  const std::uint8_t* p = bytes.data() + cur.pos;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (color) {
        for (int c = 0; c < 3; ++c) t.at(0, c, y, x) = *p++ / 255.0;
      } else {
        const double v = *p++ / 255.0;
        for (int c = 0; c < 3; ++c) t.at(0, c, y, x) = v;
      }
    }
  return t;
}

inline std::vector<std::uint8_t> encode_image(const Tensor& t) {
  if (t.n != 1 || t.c != 3)
    throw ShapeError("encode_image: expected a (1,3,h,w) tensor, got " +
                     t.shape_str());
  std::vector<std::uint8_t> out;
  const std::string header =
      "P6\n" + std::to_string(t.w) + " " + std::to_string(t.h) + "\n255\n";
  out.insert(out.end(), header.begin(), header.end());
  out.reserve(out.size() + static_cast<std::size_t>(t.w) * t.h * 3);
  for (int y = 0; y < t.h; ++y)
    for (int x = 0; x < t.w; ++x)
      for (int c = 0; c < 3; ++c) {
        const double v = std::round(t.at(0, c, y, x) * 255.0);
        out.push_back(static_cast<std::uint8_t>(std::min(255.0, std::max(0.0, v))));
      }
  return out;
}

inline Tensor read_image(const std::string& path) {
  return decode_image(detail::read_file_bytes(path), path);
}

inline void write_image(const std::string& path, const Tensor& t) {
  detail::write_file_bytes(path, encode_image(t));
}

}  // namespace mind
