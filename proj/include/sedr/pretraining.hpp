#pragma once

// Self-supervised segment warm-up. A pseudo-query is a random sample of the
// distinct body tokens of one corpus segment; the model learns to score that
// segment above the other segments of the step. It replaces the pretrained
// language-model initialization that a from-scratch model lacks.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "sedr/encoder.hpp"
#include "sedr/training.hpp"

namespace sedr {

struct PretrainConfig {
  std::size_t steps = 0;        // 0 disables the warm-up
  std::size_t batch_size = 8;   // pseudo-queries per step; as many extra segments serve as negatives
  std::size_t query_len = 5;    // distinct tokens sampled per pseudo-query
  double learning_rate = 3e-4;
  std::uint64_t seed = 0;
};

struct PretrainResult {
  std::vector<double> losses;
  double seconds = 0.0;
};

/// Every (document, segment) pair the document encoder would see, in corpus order.
struct SegmentPool {
  std::vector<SegmentBatch> segments;

  SegmentPool(const std::vector<DocumentRecord>& docs, const EncoderConfig& cfg) {
    for (const auto& d : docs) {
      if (d.token_ids.empty()) continue;
      const SegmentBatch b = split_document(d, cfg);
      for (std::size_t i = 0; i < b.num_segments; ++i) segments.push_back(isolate_segment(b, i));
    }
  }
};

/// Distinct body tokens of a one-segment batch, shuffled, truncated to `n`.
inline std::vector<std::uint32_t> pseudo_query(const SegmentBatch& seg, std::size_t n,
                                               std::mt19937_64& rng) {
  std::vector<std::uint32_t> body;
  for (std::size_t p = 1; p < seg.seq_len; ++p)
    if (seg.is_real(0, p) && seg.token(0, p) != kSepId) body.push_back(seg.token(0, p));
  std::sort(body.begin(), body.end());
  body.erase(std::unique(body.begin(), body.end()), body.end());
  std::shuffle(body.begin(), body.end(), rng);
  if (body.size() > n) body.resize(n);
  return body;
}

/// Runs `cfg.steps` Adam updates of the pseudo-query objective. Segments are
/// encoded in isolation whatever the model's interaction pattern, so the
/// warm-up trains the shared per-segment stack only.
inline PretrainResult pretrain_segments(BiEncoder& model, const std::vector<DocumentRecord>& docs,
                                        const PretrainConfig& cfg,
                                        const std::function<void(std::size_t, double)>& on_step = {}) {
  PretrainResult res;
  if (cfg.steps == 0) return res;
  SEDR_REQUIRE_AS(ConfigError, cfg.batch_size >= 1 && cfg.query_len >= 1,
                  "pretrain: batch size and query length must be >= 1");
  const SegmentPool pool(docs, model.config);
  SEDR_REQUIRE_AS(ConfigError, pool.segments.size() >= 2 * cfg.batch_size, "pretrain: corpus has ",
                  pool.segments.size(), " segments, need ", 2 * cfg.batch_size);
  std::mt19937_64 rng(cfg.seed);
  AdamState state;
  AdamOptions opt;
  opt.learning_rate = cfg.learning_rate;
  const std::size_t B = cfg.batch_size;
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<std::size_t> picked;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    picked.clear();
    while (picked.size() < 2 * B) {
      const std::size_t s = std::uniform_int_distribution<std::size_t>(0, pool.segments.size() - 1)(rng);
      if (std::find(picked.begin(), picked.end(), s) == picked.end()) picked.push_back(s);
    }
    std::vector<std::vector<std::uint32_t>> queries;
    for (std::size_t i = 0; i < B; ++i) queries.push_back(pseudo_query(pool.segments[picked[i]], cfg.query_len, rng));

    auto params = model.parameters();
    for (auto& p : params) p.zero_grad();
    Tape tape;
    double loss_value;
    {
      TapeScope scope(tape);
      std::vector<Tensor> segs;
      for (std::size_t s : picked)
        segs.push_back(encode_batch(pool.segments[s], model.doc, model.config, InteractionPattern::maxp));
      std::vector<Tensor> terms;
      for (std::size_t i = 0; i < B; ++i) {
        const Tensor q = encode_query(queries[i], model.query, model.config);
        std::vector<Tensor> negatives;
        for (std::size_t j = 0; j < segs.size(); ++j)
          if (j != i) negatives.push_back(segs[j]);
        terms.push_back(info_nce(q, segs[i], negatives));
      }
      Tensor loss = sum_scalars(terms);
      loss_value = loss.item();
      SEDR_REQUIRE_AS(NumericalError, std::isfinite(loss_value), "non-finite pretraining loss at step ",
                      step + 1);
      tape.backward(loss);
    }
    tape.clear();
    adam_step(params, state, opt);
    res.losses.push_back(loss_value);
    if (on_step) on_step(step + 1, loss_value);
  }
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

}  // namespace sedr
