#pragma once

// Segment encoder: document splitting, segment-individual embeddings, and a
// post-LN transformer stack whose attention layout selects the interaction
// pattern between segments of one document.

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sedr/config.hpp"
#include "sedr/error.hpp"
#include "sedr/log.hpp"
#include "sedr/tensor.hpp"

namespace sedr {

struct DocumentRecord {
  std::uint64_t id = 0;
  std::vector<std::uint32_t> token_ids;
};

using QueryRecord = DocumentRecord;

/// k framed segments of one document, row-major k x (m+2).
struct SegmentBatch {
  std::size_t num_segments = 0;
  std::size_t seq_len = 0;
  std::vector<std::uint32_t> token_ids;
  std::vector<std::uint8_t> pad_mask;  // 1 = real token (CLS, body, SEP)
  std::size_t first_segment = 0;       // ordinal of row 0, selects the segment embedding

  std::uint32_t token(std::size_t seg, std::size_t pos) const {
    return token_ids[seg * seq_len + pos];
  }
  bool is_real(std::size_t seg, std::size_t pos) const { return pad_mask[seg * seq_len + pos]; }
  std::size_t real_length(std::size_t seg) const {
    std::size_t n = 0;
    for (std::size_t p = 0; p < seq_len; ++p) n += pad_mask[seg * seq_len + p];
    return n;
  }
};

/// Frames [CLS, body, SEP] segments of m body tokens after truncating to k_max*m tokens.
inline SegmentBatch split_document(std::span<const std::uint32_t> tokens, const EncoderConfig& cfg) {
  SEDR_REQUIRE(!tokens.empty(), "split_document: empty document");
  const std::size_t m = cfg.segment_body_len;
  const std::size_t n = std::min(tokens.size(), cfg.max_doc_tokens());
  SegmentBatch b;
  b.num_segments = (n + m - 1) / m;
  b.seq_len = m + 2;
  b.token_ids.assign(b.num_segments * b.seq_len, kPadId);
  b.pad_mask.assign(b.num_segments * b.seq_len, 0);
  for (std::size_t i = 0; i < b.num_segments; ++i) {
    const std::size_t begin = i * m, end = std::min(n, begin + m);
    auto* row = b.token_ids.data() + i * b.seq_len;
    auto* mask = b.pad_mask.data() + i * b.seq_len;
    row[0] = kClsId;
    for (std::size_t t = begin; t < end; ++t) row[1 + t - begin] = tokens[t];
    row[1 + end - begin] = kSepId;
    std::fill(mask, mask + 2 + (end - begin), std::uint8_t{1});
  }
  return b;
}

inline SegmentBatch split_document(const DocumentRecord& doc, const EncoderConfig& cfg) {
  return split_document(std::span<const std::uint32_t>(doc.token_ids), cfg);
}

/// Segment i of `b` as a one-segment batch that keeps its ordinal.
inline SegmentBatch isolate_segment(const SegmentBatch& b, std::size_t i) {
  SEDR_REQUIRE(i < b.num_segments, "isolate_segment: segment ", i, " of ", b.num_segments);
  SegmentBatch s;
  s.num_segments = 1;
  s.seq_len = b.seq_len;
  s.first_segment = b.first_segment + i;
  const auto at = static_cast<std::ptrdiff_t>(i * b.seq_len);
  const auto len = static_cast<std::ptrdiff_t>(b.seq_len);
  s.token_ids.assign(b.token_ids.begin() + at, b.token_ids.begin() + at + len);
  s.pad_mask.assign(b.pad_mask.begin() + at, b.pad_mask.begin() + at + len);
  return s;
}

// --------------------------------------------------------------------------
// Parameters

struct LayerParams {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor ln1_gain, ln1_bias;
  Tensor w1, b1, w2, b2;
  Tensor ln2_gain, ln2_bias;

  template <typename F>
  void visit(F&& f) const {
    f("wq", wq); f("bq", bq); f("wk", wk); f("bk", bk);
    f("wv", wv); f("bv", bv); f("wo", wo); f("bo", bo);
    f("ln1_gain", ln1_gain); f("ln1_bias", ln1_bias);
    f("w1", w1); f("b1", b1); f("w2", w2); f("b2", b2);
    f("ln2_gain", ln2_gain); f("ln2_bias", ln2_bias);
  }
};

struct ModelParameters {
  Tensor token_embedding;     // vocab x d
  Tensor position_embedding;  // (m+2) x d
  Tensor segment_embedding;   // k_max x d
  std::vector<LayerParams> layers;
  std::vector<LayerParams> head;  // one layer for the transformer_head pattern, else empty
  Tensor cls_weight;  // d x d
  Tensor cls_bias;    // d

  /// Visits every tensor with a stable name in declaration order.
  template <typename F>
  void visit(F&& f) const {
    f(std::string("token_embedding"), token_embedding);
    f(std::string("position_embedding"), position_embedding);
    f(std::string("segment_embedding"), segment_embedding);
    for (std::size_t l = 0; l < layers.size(); ++l)
      layers[l].visit([&](const char* n, const Tensor& t) {
        f("layer" + std::to_string(l) + "." + n, t);
      });
    for (const auto& h : head)
      h.visit([&](const char* n, const Tensor& t) { f(std::string("head.") + n, t); });
    f(std::string("cls_weight"), cls_weight);
    f(std::string("cls_bias"), cls_bias);
  }

  std::vector<Tensor> tensors() const {
    std::vector<Tensor> out;
    visit([&](const std::string&, const Tensor& t) { out.push_back(t); });
    return out;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    visit([&](const std::string& n, const Tensor&) { out.push_back(n); });
    return out;
  }

  std::size_t count() const {
    std::size_t n = 0;
    visit([&](const std::string&, const Tensor& t) { n += t.size(); });
    return n;
  }

  /// Deep copy with fresh tensors (no shared storage).
  ModelParameters clone() const {
    ModelParameters c = *this;
    auto fresh = [](Tensor& t) { t = Tensor(t.shape(), std::vector<double>(t.data().begin(), t.data().end()), t.requires_grad()); };
    fresh(c.token_embedding);
    fresh(c.position_embedding);
    fresh(c.segment_embedding);
    auto fresh_layer = [&](LayerParams& p) {
      for (Tensor* t : {&p.wq, &p.bq, &p.wk, &p.bk, &p.wv, &p.bv, &p.wo, &p.bo, &p.ln1_gain,
                        &p.ln1_bias, &p.w1, &p.b1, &p.w2, &p.b2, &p.ln2_gain, &p.ln2_bias})
        fresh(*t);
    };
    for (auto& l : c.layers) fresh_layer(l);
    for (auto& l : c.head) fresh_layer(l);
    fresh(c.cls_weight);
    fresh(c.cls_bias);
    return c;
  }

  static ModelParameters init(const EncoderConfig& cfg, std::mt19937_64& rng, bool with_head) {
    cfg.validate();
    const std::size_t d = cfg.hidden_dim, f = cfg.ffn_dim;
    std::normal_distribution<double> normal(0.0, cfg.init_std);
    auto randn = [&](Shape s) {
      Tensor t = Tensor::zeros(std::move(s), true);
      for (double& v : t.mutable_data()) v = normal(rng);
      return t;
    };
    auto zeros = [](Shape s) { return Tensor::zeros(std::move(s), true); };
    auto ones = [](Shape s) {
      Tensor t = Tensor::zeros(std::move(s), true);
      for (double& v : t.mutable_data()) v = 1.0;
      return t;
    };
    auto make_layer = [&]() {
      LayerParams p;
      p.wq = randn({d, d}); p.bq = zeros({d});
      p.wk = randn({d, d}); p.bk = zeros({d});
      p.wv = randn({d, d}); p.bv = zeros({d});
      p.wo = randn({d, d}); p.bo = zeros({d});
      p.ln1_gain = ones({d}); p.ln1_bias = zeros({d});
      p.w1 = randn({d, f}); p.b1 = zeros({f});
      p.w2 = randn({f, d}); p.b2 = zeros({d});
      p.ln2_gain = ones({d}); p.ln2_bias = zeros({d});
      return p;
    };
    // Inputs shared by every sequence (reserved tokens, positions, segment
    // ordinals) start at zero, so initial representations carry no common
    // offset and scores start out driven by the content tokens.
    ModelParameters m;
    m.token_embedding = randn({cfg.vocab_size, d});
    std::fill_n(m.token_embedding.mutable_data().begin(), (kSepId + 1) * d, 0.0);
    m.position_embedding = zeros({cfg.seq_len(), d});
    m.segment_embedding = zeros({cfg.max_segments, d});
    for (std::size_t l = 0; l < cfg.num_layers; ++l) m.layers.push_back(make_layer());
    if (with_head) m.head.push_back(make_layer());
    m.cls_weight = randn({d, d});
    m.cls_bias = zeros({d});
    return m;
  }
};

/// Query and document encoders. With tie_encoders both members share storage.
struct BiEncoder {
  EncoderConfig config;
  ModelParameters query;
  ModelParameters doc;

  static BiEncoder init(const EncoderConfig& cfg, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    BiEncoder e;
    e.config = cfg;
    const bool head = cfg.pattern == InteractionPattern::transformer_head;
    e.doc = ModelParameters::init(cfg, rng, head);
    if (cfg.tie_encoders) {
      e.query = e.doc;
      e.query.head.clear();
    } else {
      e.query = ModelParameters::init(cfg, rng, false);
    }
    return e;
  }

  /// Distinct trainable tensors: document encoder first, then query encoder unless tied.
  std::vector<Tensor> parameters() const {
    auto out = doc.tensors();
    if (!config.tie_encoders) {
      auto q = query.tensors();
      out.insert(out.end(), q.begin(), q.end());
    }
    return out;
  }

  std::size_t parameter_count() const {
    return doc.count() + (config.tie_encoders ? 0 : query.count());
  }

  BiEncoder clone() const {
    BiEncoder c;
    c.config = config;
    c.doc = doc.clone();
    if (config.tie_encoders) {
      c.query = c.doc;
      c.query.head.clear();
    } else {
      c.query = query.clone();
    }
    return c;
  }
};

// --------------------------------------------------------------------------
// Embedding and attention layouts

/// H0[i,p] = tok[id] + pos[p] + seg[i], shape k x (m+2) x d.
inline Tensor embed_inputs(const SegmentBatch& batch, const ModelParameters& params) {
  const std::size_t k = batch.num_segments, L = batch.seq_len;
  const std::size_t d = params.token_embedding.cols();
  SEDR_REQUIRE(k >= 1 && batch.first_segment + k <= params.segment_embedding.dim(0),
                  "embed_inputs: ", batch.first_segment + k, " segments exceed the ",
                  params.segment_embedding.dim(0), " segment embeddings");
  SEDR_REQUIRE(L <= params.position_embedding.dim(0), "embed_inputs: sequence length ", L,
                  " exceeds the position table");
  std::vector<std::uint32_t> pos(k * L), seg(k * L);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t p = 0; p < L; ++p) {
      pos[i * L + p] = static_cast<std::uint32_t>(p);
      seg[i * L + p] = static_cast<std::uint32_t>(batch.first_segment + i);
    }
  Tensor tok = embedding(params.token_embedding, batch.token_ids);
  Tensor h = add(add(tok, embedding(params.position_embedding, pos)),
                 embedding(params.segment_embedding, seg));
  return reshape(h, {k, L, d});
}

namespace layout {

inline std::vector<std::uint32_t> real_rows(std::span<const std::uint8_t> mask, std::size_t seg,
                                            std::size_t L) {
  std::vector<std::uint32_t> rows;
  for (std::size_t p = 0; p < L; ++p)
    if (mask[seg * L + p]) rows.push_back(static_cast<std::uint32_t>(seg * L + p));
  return rows;
}

/// Each row of segment i attends only the real tokens of segment i.
inline AttentionLayout standard(std::span<const std::uint8_t> mask, std::size_t k, std::size_t L) {
  AttentionLayout lay;
  for (std::size_t i = 0; i < k; ++i) {
    auto own = real_rows(mask, i, L);
    for (std::size_t p = 0; p < L; ++p) lay.add_row(own);
  }
  return lay;
}

/// Segment i attends its own real tokens followed by the CLS rows of segments j != i.
inline AttentionLayout segment_interaction(std::span<const std::uint8_t> mask, std::size_t k,
                                           std::size_t L) {
  AttentionLayout lay;
  for (std::size_t i = 0; i < k; ++i) {
    auto keys = real_rows(mask, i, L);
    for (std::size_t j = 0; j < k; ++j)
      if (j != i) keys.push_back(static_cast<std::uint32_t>(j * L));
    for (std::size_t p = 0; p < L; ++p) lay.add_row(keys);
  }
  return lay;
}

/// CLS rows attend every real token of the document; other rows attend their
/// own segment plus the other segments' CLS rows.
inline AttentionLayout global(std::span<const std::uint8_t> mask, std::size_t k, std::size_t L) {
  std::vector<std::uint32_t> all;
  for (std::size_t i = 0; i < k; ++i) {
    auto own = real_rows(mask, i, L);
    all.insert(all.end(), own.begin(), own.end());
  }
  AttentionLayout lay;
  for (std::size_t i = 0; i < k; ++i) {
    auto keys = real_rows(mask, i, L);
    for (std::size_t j = 0; j < k; ++j)
      if (j != i) keys.push_back(static_cast<std::uint32_t>(j * L));
    lay.add_row(all);
    for (std::size_t p = 1; p < L; ++p) lay.add_row(keys);
  }
  return lay;
}

/// n rows, each attending all n rows.
inline AttentionLayout dense(std::size_t n) {
  std::vector<std::uint32_t> keys(n);
  for (std::size_t i = 0; i < n; ++i) keys[i] = static_cast<std::uint32_t>(i);
  AttentionLayout lay;
  for (std::size_t i = 0; i < n; ++i) lay.add_row(keys);
  return lay;
}

inline AttentionLayout for_pattern(InteractionPattern p, const SegmentBatch& b) {
  switch (p) {
    case InteractionPattern::segment_interaction:
      return segment_interaction(b.pad_mask, b.num_segments, b.seq_len);
    case InteractionPattern::global_attention:
      return global(b.pad_mask, b.num_segments, b.seq_len);
    case InteractionPattern::maxp:
    case InteractionPattern::transformer_head:
      break;
  }
  return standard(b.pad_mask, b.num_segments, b.seq_len);
}

}  // namespace layout

/// One post-LN transformer layer: attention, output projection, residual + LN,
/// GELU feed-forward, residual + LN. Rows of `h` are positions; `lay` decides
/// which rows each row attends.
inline Tensor encoder_layer(const Tensor& h, const LayerParams& p, const AttentionLayout& lay,
                            std::size_t heads, double eps) {
  Tensor q = linear(h, p.wq, p.bq);
  Tensor k = linear(h, p.wk, p.bk);
  Tensor v = linear(h, p.wv, p.bv);
  Tensor a = linear(attention(q, k, v, lay, heads), p.wo, p.bo);
  Tensor h1 = layer_norm(add(h, a), p.ln1_gain, p.ln1_bias, eps);
  Tensor f = linear(gelu(linear(h1, p.w1, p.b1)), p.w2, p.b2);
  return layer_norm(add(h1, f), p.ln2_gain, p.ln2_bias, eps);
}

/// Standard layer over one segment H[L x d]; `mask` marks real keys.
inline Tensor attention_standard(const Tensor& h, const LayerParams& p,
                                 std::span<const std::uint8_t> mask, std::size_t heads,
                                 double eps) {
  return encoder_layer(h, p, layout::standard(mask, 1, h.rows()), heads, eps);
}

/// Segment-interaction layer over H[k x L x d]; masks is k x L.
inline Tensor attention_segment_interaction(const Tensor& h, const LayerParams& p,
                                            std::span<const std::uint8_t> masks, std::size_t heads,
                                            double eps) {
  SEDR_REQUIRE_AS(DimensionError, h.rank() == 3, "attention_segment_interaction: expected k x L x d, got ",
                                  detail::shape_str(h.shape()));
  return encoder_layer(h, p, layout::segment_interaction(masks, h.dim(0), h.dim(1)), heads, eps);
}

// --------------------------------------------------------------------------
// Encoders

/// Final hidden states before CLS extraction (k x L x d).
inline Tensor encode_hidden(const SegmentBatch& batch, const ModelParameters& params,
                            const EncoderConfig& cfg, InteractionPattern pattern) {
  Tensor h = embed_inputs(batch, params);
  const AttentionLayout lay = layout::for_pattern(pattern, batch);
  for (const auto& layer : params.layers)
    h = encoder_layer(h, layer, lay, cfg.num_heads, cfg.layer_norm_eps);
  return h;
}

inline Tensor encode_batch(const SegmentBatch& batch, const ModelParameters& params,
                           const EncoderConfig& cfg, InteractionPattern pattern) {
  Tensor h = encode_hidden(batch, params, cfg, pattern);
  std::vector<std::uint32_t> cls(batch.num_segments);
  for (std::size_t i = 0; i < cls.size(); ++i) cls[i] = static_cast<std::uint32_t>(i * batch.seq_len);
  Tensor c = gather_rows(h, cls);
  if (pattern == InteractionPattern::transformer_head) {
    SEDR_REQUIRE(!params.head.empty(), "transformer_head pattern needs head-layer parameters");
    c = encoder_layer(c, params.head.front(), layout::dense(batch.num_segments), cfg.num_heads,
                      cfg.layer_norm_eps);
  }
  return linear(c, params.cls_weight, params.cls_bias);
}

/// Segment representations of a document, one row per segment (k x d).
inline Tensor encode_document(std::span<const std::uint32_t> tokens, const ModelParameters& params,
                              const EncoderConfig& cfg) {
  return encode_batch(split_document(tokens, cfg), params, cfg, cfg.pattern);
}

inline Tensor encode_document(const DocumentRecord& doc, const ModelParameters& params,
                              const EncoderConfig& cfg) {
  return encode_document(std::span<const std::uint32_t>(doc.token_ids), params, cfg);
}

/// Query as a single framed segment through the standard stack (1 x d).
inline Tensor encode_query(std::span<const std::uint32_t> tokens, const ModelParameters& params,
                           const EncoderConfig& cfg) {
  SEDR_REQUIRE(!tokens.empty(), "encode_query: empty query");
  if (tokens.size() > cfg.segment_body_len) {
    log::warn(detail::concat("query of ", tokens.size(), " tokens truncated to ",
                             cfg.segment_body_len));
    tokens = tokens.first(cfg.segment_body_len);
  }
  return encode_batch(split_document(tokens, cfg), params, cfg, InteractionPattern::maxp);
}

inline Tensor encode_query(const QueryRecord& q, const ModelParameters& params,
                           const EncoderConfig& cfg) {
  return encode_query(std::span<const std::uint32_t>(q.token_ids), params, cfg);
}

/// Mean pairwise cosine distance between rows; 0 for a single row.
inline double segment_dispersion(const Tensor& seg_vecs) {
  const std::size_t k = seg_vecs.rows(), d = seg_vecs.cols();
  SEDR_REQUIRE(k >= 1, "segment_dispersion: no vectors");
  auto inner = [&](std::size_t a, std::size_t b) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += seg_vecs.at(a, j) * seg_vecs.at(b, j);
    return s;
  };
  std::vector<double> sq(k);
  for (std::size_t i = 0; i < k; ++i) {
    sq[i] = inner(i, i);
    SEDR_REQUIRE(sq[i] > 0.0, "segment_dispersion: zero-norm vector at row ", i);
  }
  if (k == 1) return 0.0;
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t b = a + 1; b < k; ++b) {
      // sqrt(sq*sq) == sq exactly, so identical rows give exactly 0.
      total += 1.0 - inner(a, b) / std::sqrt(sq[a] * sq[b]);
      ++pairs;
    }
  return total / static_cast<double>(pairs);
}

inline double segment_dispersion(const std::vector<std::vector<double>>& vecs) {
  SEDR_REQUIRE(!vecs.empty(), "segment_dispersion: no vectors");
  std::vector<double> flat;
  for (const auto& v : vecs) {
    SEDR_REQUIRE_AS(DimensionError, v.size() == vecs.front().size(),
                                    "segment_dispersion: ragged vectors");
    flat.insert(flat.end(), v.begin(), v.end());
  }
  return segment_dispersion(Tensor({vecs.size(), vecs.front().size()}, std::move(flat)));
}

}  // namespace sedr
