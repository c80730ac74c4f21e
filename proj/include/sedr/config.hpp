#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "sedr/error.hpp"

namespace sedr {

inline constexpr std::uint32_t kPadId = 0;
inline constexpr std::uint32_t kClsId = 1;
inline constexpr std::uint32_t kSepId = 2;

/// How segments of one document exchange information inside the encoder.
enum class InteractionPattern : std::uint32_t {
  maxp = 0,                 // segments encoded independently
  segment_interaction = 1,  // every layer: keys/values add the other segments' CLS states
  transformer_head = 2,     // independent stack, then one extra layer over the k CLS vectors
  global_attention = 3,     // CLS attends all document tokens; others own segment + all CLS
};

inline std::string_view pattern_name(InteractionPattern p) {
  switch (p) {
    case InteractionPattern::maxp: return "maxp";
    case InteractionPattern::segment_interaction: return "segint";
    case InteractionPattern::transformer_head: return "head";
    case InteractionPattern::global_attention: return "global";
  }
  return "?";
}

inline std::optional<InteractionPattern> parse_pattern(std::string_view s) {
  if (s == "maxp") return InteractionPattern::maxp;
  if (s == "segint" || s == "segment_interaction") return InteractionPattern::segment_interaction;
  if (s == "head" || s == "transformer_head") return InteractionPattern::transformer_head;
  if (s == "global" || s == "global_attention") return InteractionPattern::global_attention;
  return std::nullopt;
}

struct EncoderConfig {
  std::size_t vocab_size = 256;
  std::size_t hidden_dim = 16;
  std::size_t num_heads = 2;
  std::size_t num_layers = 2;
  std::size_t ffn_dim = 32;
  std::size_t segment_body_len = 16;  // m: body tokens per segment, excluding CLS/SEP
  std::size_t max_segments = 4;       // k_max
  InteractionPattern pattern = InteractionPattern::segment_interaction;
  bool tie_encoders = false;
  double layer_norm_eps = 1e-6;
  double init_std = 0.02;

  std::size_t seq_len() const { return segment_body_len + 2; }
  std::size_t max_doc_tokens() const { return segment_body_len * max_segments; }

  void validate() const {
    SEDR_REQUIRE_AS(ConfigError, vocab_size > kSepId, "vocab_size must exceed the reserved ids");
    SEDR_REQUIRE_AS(ConfigError, hidden_dim >= 1 && num_heads >= 1 && hidden_dim % num_heads == 0,
                                 "hidden_dim ", hidden_dim, " not divisible by num_heads ",
                                 num_heads);
    SEDR_REQUIRE_AS(ConfigError, segment_body_len >= 1, "segment_body_len must be >= 1");
    SEDR_REQUIRE_AS(ConfigError, max_segments >= 1 && max_segments <= 65535,
                                 "max_segments must be in [1, 65535]");
    SEDR_REQUIRE_AS(ConfigError, num_layers >= 1 && ffn_dim >= 1, "empty layer stack");
    SEDR_REQUIRE_AS(ConfigError, layer_norm_eps > 0.0, "layer_norm_eps must be positive");
  }
};

/// d=16, 2 layers, 2 heads, m=16, k_max=4, vocab 256.
inline EncoderConfig tiny_profile() { return EncoderConfig{}; }

/// d=64, 4 layers, 4 heads, m=32, k_max=4, vocab 4096.
inline EncoderConfig desk_profile() {
  EncoderConfig c;
  c.init_std = 0.05;
  c.vocab_size = 4096;
  c.hidden_dim = 64;
  c.num_heads = 4;
  c.num_layers = 4;
  c.ffn_dim = 128;
  c.segment_body_len = 32;
  c.max_segments = 4;
  return c;
}

/// RoBERTa-base shape with 512-token segments and up to 4 segments (2048 tokens).
inline EncoderConfig paper_profile() {
  EncoderConfig c;
  c.vocab_size = 50265;
  c.hidden_dim = 768;
  c.num_heads = 12;
  c.num_layers = 12;
  c.ffn_dim = 3072;
  c.segment_body_len = 512;
  c.max_segments = 4;
  return c;
}

inline std::optional<EncoderConfig> profile_by_name(std::string_view name) {
  if (name == "tiny") return tiny_profile();
  if (name == "desk") return desk_profile();
  if (name == "paper") return paper_profile();
  return std::nullopt;
}

struct TrainConfig {
  std::size_t batch_size = 8;
  std::size_t cache_size = 16;
  std::size_t hardness = 20;
  double learning_rate = 1e-3;
  std::size_t epochs = 1;
  std::uint64_t seed = 0;
  /// Include the cache-query anchor losses of cached entries in the batch loss.
  bool cache_query_loss = true;

  static TrainConfig paper_defaults() {
    TrainConfig c;
    c.batch_size = 17;
    c.cache_size = 50;
    c.hardness = 100;
    c.learning_rate = 5e-5;
    return c;
  }
};

}  // namespace sedr
