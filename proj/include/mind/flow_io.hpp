#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "mind/error.hpp"

namespace mind {

/// Dense displacement field from the first to the third frame, in pixels.
/// u is the horizontal (column) component, v the vertical (row) one.
struct FlowField {
  int h = 0, w = 0;
  std::vector<double> u, v;
  std::vector<std::uint8_t> valid;

  FlowField() = default;
  FlowField(int h_, int w_)
      : h(h_), w(w_),
        u(static_cast<std::size_t>(h_) * w_, 0.0),
        v(static_cast<std::size_t>(h_) * w_, 0.0),
        valid(static_cast<std::size_t>(h_) * w_, 1) {}

  std::size_t index(int y, int x) const {
    return static_cast<std::size_t>(y) * w + x;
  }
};

// The file layout is the common .flo convention: a magic float whose bytes
// spell "PIEH", i32 width, i32 height, then interleaved (u, v) f32 pairs in
// row-major order. Components above 1e9 mark unknown flow.
constexpr float kFlowMagic = 202021.25f;
constexpr double kFlowSentinel = 1e10;

namespace detail {

inline void put_u32le(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 24));
}

inline void put_f32le(std::vector<std::uint8_t>& out, float f) {
  put_u32le(out, std::bit_cast<std::uint32_t>(f));
}

inline std::uint32_t get_u32le(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 |
         static_cast<std::uint32_t>(p[3]) << 24;
}

inline float get_f32le(const std::uint8_t* p) {
  return std::bit_cast<float>(get_u32le(p));
}

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  return bytes;
}

inline void write_file_bytes(const std::string& path,
                             const std::vector<std::uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed: " + path);
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_flow(const FlowField& flow) {
  std::vector<std::uint8_t> out;
  out.reserve(12 + flow.u.size() * 8);
  detail::put_f32le(out, kFlowMagic);
  detail::put_u32le(out, static_cast<std::uint32_t>(flow.w));
  detail::put_u32le(out, static_cast<std::uint32_t>(flow.h));
  for (std::size_t i = 0; i < flow.u.size(); ++i) {
    if (flow.valid[i]) {
      detail::put_f32le(out, static_cast<float>(flow.u[i]));
      detail::put_f32le(out, static_cast<float>(flow.v[i]));
    } else {
      detail::put_f32le(out, static_cast<float>(kFlowSentinel));
      detail::put_f32le(out, static_cast<float>(kFlowSentinel));
    }
  }
  return out;
}

inline FlowField decode_flow(const std::vector<std::uint8_t>& bytes,
                             const std::string& origin = "<memory>") {
  if (bytes.size() < 12) throw IoError(origin + ": truncated flow file");
  const float magic = detail::get_f32le(bytes.data());
  if (magic != kFlowMagic)
    throw IoError(origin + ": bad flow magic " + std::to_string(magic));
  const std::int32_t w = static_cast<std::int32_t>(detail::get_u32le(bytes.data() + 4));
  const std::int32_t h = static_cast<std::int32_t>(detail::get_u32le(bytes.data() + 8));
  if (w <= 0 || h <= 0) throw IoError(origin + ": bad flow dimensions");
  const std::size_t expect = 12 + static_cast<std::size_t>(w) * h * 8;
  if (bytes.size() != expect)
    throw IoError(origin + ": payload size " + std::to_string(bytes.size()) +
                  " does not match " + std::to_string(w) + "x" + std::to_string(h));
  FlowField flow(h, w);
  const std::uint8_t* p = bytes.data() + 12;
  for (std::size_t i = 0; i < flow.u.size(); ++i, p += 8) {
    flow.u[i] = detail::get_f32le(p);
    flow.v[i] = detail::get_f32le(p + 4);
    flow.valid[i] = std::abs(flow.u[i]) <= 1e9 && std::abs(flow.v[i]) <= 1e9;
  }
  return flow;
}

inline void write_flow(const std::string& path, const FlowField& flow) {
  detail::write_file_bytes(path, encode_flow(flow));
}

inline FlowField read_flow(const std::string& path) {
  return decode_flow(detail::read_file_bytes(path), path);
}

}  // namespace mind
