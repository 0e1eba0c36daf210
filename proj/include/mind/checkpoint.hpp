#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <optional>
#include <string>
#include <vector>

#include "mind/flow_io.hpp"  // byte helpers
#include "mind/net.hpp"
#include "mind/trainer.hpp"

namespace mind {

// Checkpoint layout (all integers and floats little-endian):
//   8 bytes  magic "MINDCKPT"
//   u32      version (currently 1)
//   u32 x4   input_h, input_w, convs_per_block, levels
//   u32[L]   encoder channels, u32[L] decoder channels
//   u32      number of parameter layers
//   per layer: u32 kind (0 conv, 1 convT, 2 prelu)
//     conv kinds: u32 out_c,in_c,kh,kw + f32 weights + u32 len + f32 bias
//     prelu:      u32 len + f32 slopes
//   u8       optimizer-state flag
//     if set: u64 step count, f64 lr, then f64 moment pairs per array
//   u32      CRC-32 of every preceding byte

namespace detail {

inline std::uint32_t crc32_ieee(const std::uint8_t* data, std::size_t len,
                                std::uint32_t crc = 0) {
  static const auto table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  crc = ~crc;
  for (std::size_t i = 0; i < len; ++i)
    crc = table[(crc ^ data[i]) & 0xFF] ^ (crc >> 8);
  return ~crc;
}

inline void put_u64le(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_f64le(std::vector<std::uint8_t>& out, double v) {
  put_u64le(out, std::bit_cast<std::uint64_t>(v));
}

struct CkptReader {
  const std::vector<std::uint8_t>& bytes;
  std::size_t pos = 0;
  std::string origin;

  [[noreturn]] void fail(const std::string& what) const {
    throw IoError(origin + ": " + what);
  }
  void need(std::size_t n) const {
    if (bytes.size() - pos < n) fail("truncated checkpoint");
  }
  std::uint32_t u32() {
    need(4);
    const std::uint32_t v = get_u32le(bytes.data() + pos);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(bytes[pos + i]) << (8 * i);
    pos += 8;
    return v;
  }
  float f32() {
    need(4);
    const float v = get_f32le(bytes.data() + pos);
    pos += 4;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::uint8_t u8() {
    need(1);
    return bytes[pos++];
  }
};

inline void put_f32_array(std::vector<std::uint8_t>& out,
                          const std::vector<double>& v) {
  for (double x : v) put_f32le(out, static_cast<float>(x));
}

inline void get_f32_array(CkptReader& r, std::vector<double>& v, std::size_t n) {
  v.resize(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = r.f32();
}

inline void put_f64_array(std::vector<std::uint8_t>& out,
                          const std::vector<double>& v) {
  for (double x : v) put_f64le(out, x);
}

inline void get_f64_array(CkptReader& r, std::vector<double>& v, std::size_t n) {
  v.resize(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = r.f64();
}

}  // namespace detail

constexpr char kCkptMagic[8] = {'M', 'I', 'N', 'D', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCkptVersion = 1;

inline std::vector<std::uint8_t> encode_checkpoint(const MindNet& net,
                                                   const OptimizerState* opt = nullptr) {
  std::vector<std::uint8_t> out;
  out.insert(out.end(), kCkptMagic, kCkptMagic + 8);
  detail::put_u32le(out, kCkptVersion);
  const NetConfig& c = net.config();
  detail::put_u32le(out, static_cast<std::uint32_t>(c.input_h));
  detail::put_u32le(out, static_cast<std::uint32_t>(c.input_w));
  detail::put_u32le(out, static_cast<std::uint32_t>(c.convs_per_block));
  detail::put_u32le(out, static_cast<std::uint32_t>(c.levels()));
  for (int ch : c.conv_channels) detail::put_u32le(out, static_cast<std::uint32_t>(ch));
  for (int ch : c.dconv_channels) detail::put_u32le(out, static_cast<std::uint32_t>(ch));

  const auto& params = net.params();
  detail::put_u32le(out, static_cast<std::uint32_t>(params.size()));
  for (const LayerParams& p : params) {
    detail::put_u32le(out, static_cast<std::uint32_t>(p.kind));
    if (p.kind == LayerKind::prelu) {
      detail::put_u32le(out, static_cast<std::uint32_t>(p.slope.size()));
      detail::put_f32_array(out, p.slope);
    } else {
      detail::put_u32le(out, static_cast<std::uint32_t>(p.weights.n));
      detail::put_u32le(out, static_cast<std::uint32_t>(p.weights.c));
      detail::put_u32le(out, static_cast<std::uint32_t>(p.weights.h));
      detail::put_u32le(out, static_cast<std::uint32_t>(p.weights.w));
      detail::put_f32_array(out, p.weights.data);
      detail::put_u32le(out, static_cast<std::uint32_t>(p.bias.size()));
      detail::put_f32_array(out, p.bias);
    }
  }

  out.push_back(opt ? 1 : 0);
  if (opt) {
    detail::put_u64le(out, static_cast<std::uint64_t>(opt->t));
    detail::put_f64le(out, opt->lr);
    for (const auto& mo : opt->layers) {
      detail::put_f64_array(out, mo.m_w);
      detail::put_f64_array(out, mo.v_w);
      detail::put_f64_array(out, mo.m_b);
      detail::put_f64_array(out, mo.v_b);
      detail::put_f64_array(out, mo.m_s);
      detail::put_f64_array(out, mo.v_s);
    }
  }

  detail::put_u32le(out, detail::crc32_ieee(out.data(), out.size()));
  return out;
}

struct LoadedCheckpoint {
  MindNet net;
  std::optional<OptimizerState> opt;
};

/// Decodes a checkpoint, verifying the CRC before anything else. When
/// `expected` is given, any differing config field is reported by name.
inline LoadedCheckpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes,
                                          const std::string& origin = "<memory>",
                                          const NetConfig* expected = nullptr) {
  if (bytes.size() < 16) throw IoError(origin + ": truncated checkpoint");
  const std::uint32_t stored =
      detail::get_u32le(bytes.data() + bytes.size() - 4);
  const std::uint32_t actual = detail::crc32_ieee(bytes.data(), bytes.size() - 4);
  if (stored != actual)
    throw IoError(origin + ": CRC mismatch (file corrupt)");

  detail::CkptReader r{bytes, 0, origin};
  if (std::memcmp(bytes.data(), kCkptMagic, 8) != 0)
    throw IoError(origin + ": bad checkpoint magic");
  r.pos = 8;
  const std::uint32_t version = r.u32();
  if (version != kCkptVersion)
    throw IoError(origin + ": unsupported checkpoint version " +
                  std::to_string(version));

  NetConfig c;
  c.input_h = static_cast<int>(r.u32());
  c.input_w = static_cast<int>(r.u32());
  c.convs_per_block = static_cast<int>(r.u32());
  const std::uint32_t levels = r.u32();
  if (levels > 8) r.fail("implausible block count");
  for (std::uint32_t i = 0; i < levels; ++i)
    c.conv_channels.push_back(static_cast<int>(r.u32()));
  for (std::uint32_t i = 0; i < levels; ++i)
    c.dconv_channels.push_back(static_cast<int>(r.u32()));

  if (expected) {
    auto differ = [&](const std::string& field) {
      throw IoError(origin + ": checkpoint config field '" + field +
                    "' does not match the expected configuration");
    };
    if (c.input_h != expected->input_h) differ("input_h");
    if (c.input_w != expected->input_w) differ("input_w");
    if (c.convs_per_block != expected->convs_per_block) differ("convs_per_block");
    if (c.conv_channels != expected->conv_channels) differ("conv_channels");
    if (c.dconv_channels != expected->dconv_channels) differ("dconv_channels");
  }

  LoadedCheckpoint loaded{MindNet::build(c, 0), std::nullopt};
  auto& params = loaded.net.params();
  const std::uint32_t n_layers = r.u32();
  if (n_layers != params.size())
    r.fail("layer count " + std::to_string(n_layers) + " does not match config");
  for (LayerParams& p : params) {
    const std::uint32_t kind = r.u32();
    if (kind > 2) r.fail("unknown layer kind tag " + std::to_string(kind));
    if (kind != static_cast<std::uint32_t>(p.kind))
      r.fail("layer kind does not match the architecture");
    if (p.kind == LayerKind::prelu) {
      const std::uint32_t len = r.u32();
      if (len != p.slope.size()) r.fail("slope length mismatch");
      detail::get_f32_array(r, p.slope, len);
    } else {
      const int n = static_cast<int>(r.u32());
      const int ci = static_cast<int>(r.u32());
      const int kh = static_cast<int>(r.u32());
      const int kw = static_cast<int>(r.u32());
      if (n != p.weights.n || ci != p.weights.c || kh != p.weights.h ||
          kw != p.weights.w)
        r.fail("weight shape mismatch");
      detail::get_f32_array(r, p.weights.data, p.weights.data.size());
      const std::uint32_t blen = r.u32();
      if (blen != p.bias.size()) r.fail("bias length mismatch");
      detail::get_f32_array(r, p.bias, blen);
    }
    p.zero_grads();
  }
  loaded.net.invalidate_cache();

  if (r.u8()) {
    OptimizerState st;
    st.t = static_cast<long>(r.u64());
    st.lr = r.f64();
    st.layers.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& mo = st.layers[i];
      detail::get_f64_array(r, mo.m_w, params[i].weights.size());
      detail::get_f64_array(r, mo.v_w, params[i].weights.size());
      detail::get_f64_array(r, mo.m_b, params[i].bias.size());
      detail::get_f64_array(r, mo.v_b, params[i].bias.size());
      detail::get_f64_array(r, mo.m_s, params[i].slope.size());
      detail::get_f64_array(r, mo.v_s, params[i].slope.size());
    }
    loaded.opt = std::move(st);
  }
  if (r.pos != bytes.size() - 4) r.fail("trailing bytes in checkpoint");
  return loaded;
}

inline void save_checkpoint(const std::string& path, const MindNet& net,
                            const OptimizerState* opt = nullptr) {
  detail::write_file_bytes(path, encode_checkpoint(net, opt));
}

inline LoadedCheckpoint load_checkpoint(const std::string& path,
                                        const NetConfig* expected = nullptr) {
  return decode_checkpoint(detail::read_file_bytes(path), path, expected);
}

}  // namespace mind
