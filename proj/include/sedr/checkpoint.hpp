#pragma once

// Checkpoint file: "SEDRCKPT", u32 version, encoder config block, u64 tensor
// count, then each tensor of BiEncoder::parameters() as u64 rank, u64 dims and
// f64 values. All integers and floats little-endian.

#include <string>

#include "sedr/binary_io.hpp"
#include "sedr/config.hpp"
#include "sedr/encoder.hpp"

namespace sedr {

inline constexpr std::string_view kCheckpointMagic = "SEDRCKPT";
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::string serialize_checkpoint(const BiEncoder& model) {
  const EncoderConfig& c = model.config;
  binary::Writer w;
  w.bytes(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  for (std::size_t v : {c.vocab_size, c.hidden_dim, c.num_heads, c.num_layers, c.ffn_dim,
                        c.segment_body_len, c.max_segments})
    w.u64(v);
  w.u32(static_cast<std::uint32_t>(c.pattern));
  w.u32(c.tie_encoders ? 1 : 0);
  w.f64(c.layer_norm_eps);
  w.f64(c.init_std);
  const auto params = model.parameters();
  w.u64(params.size());
  for (const auto& t : params) {
    w.u64(t.rank());
    for (auto s : t.shape()) w.u64(s);
    for (double v : t.data()) w.f64(v);
  }
  return w.data();
}

inline BiEncoder deserialize_checkpoint(std::string bytes, const std::string& what = "checkpoint") {
  binary::Reader r(std::move(bytes), what);
  r.expect(kCheckpointMagic);
  if (const auto ver = r.u32(); ver != kCheckpointVersion)
    r.fail(detail::concat("unsupported version ", ver));
  EncoderConfig c;
  for (std::size_t* f : {&c.vocab_size, &c.hidden_dim, &c.num_heads, &c.num_layers, &c.ffn_dim,
                         &c.segment_body_len, &c.max_segments})
    *f = r.u64();
  const auto pattern = r.u32();
  if (pattern > 3) r.fail(detail::concat("unknown interaction pattern ", pattern));
  c.pattern = static_cast<InteractionPattern>(pattern);
  c.tie_encoders = r.u32() != 0;
  c.layer_norm_eps = r.f64();
  c.init_std = r.f64();
  try {
    c.validate();
  } catch (const ConfigError& e) {
    r.fail(e.what());
  }
  BiEncoder model = BiEncoder::init(c, 0);
  auto params = model.parameters();
  if (const auto n = r.u64(); n != params.size())
    r.fail(detail::concat("tensor count ", n, ", configuration implies ", params.size()));
  for (auto& t : params) {
    const auto rank = r.u64();
    Shape shape;
    for (std::uint64_t i = 0; i < rank && i < 8; ++i) shape.push_back(r.u64());
    if (shape != t.shape())
      r.fail(detail::concat("tensor shape ", detail::shape_str(shape), ", expected ",
                            detail::shape_str(t.shape())));
    r.need(t.size() * 8);
    for (double& v : t.mutable_data()) v = r.f64();
  }
  if (!r.at_end()) r.fail("trailing bytes");
  return model;
}

inline void save_checkpoint(const BiEncoder& model, const std::string& path) {
  binary::write_file(path, serialize_checkpoint(model));
}

inline BiEncoder load_checkpoint(const std::string& path) {
  return deserialize_checkpoint(binary::read_file(path), path);
}

}  // namespace sedr
