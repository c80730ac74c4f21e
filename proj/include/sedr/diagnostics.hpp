#pragma once

// Whole-model diagnostics: the batch-loss finite-difference check and mean
// segment dispersion over a corpus.

#include <cstdint>
#include <random>
#include <vector>

#include "sedr/encoder.hpp"
#include "sedr/gradcheck.hpp"
#include "sedr/training.hpp"

namespace sedr {

struct BatchGradCheckSetup {
  std::size_t batch_size = 2;
  std::size_t segments = 3;      // every document has exactly this many segments
  std::size_t cache_entries = 3; // filled by warm-up steps before the check
  std::size_t num_coords = 200;
  std::uint64_t seed = 0;
};

/// Checks the full batch loss (batch terms plus cache-query terms over a
/// non-empty cache) against central differences over every parameter tensor.
inline GradCheckResult batch_loss_gradcheck(const EncoderConfig& cfg, const BatchGradCheckSetup& s) {
  cfg.validate();
  SEDR_REQUIRE(s.segments >= 1 && s.segments <= cfg.max_segments,
               "gradcheck: segments must be in [1, max_segments]");
  std::mt19937_64 rng(s.seed);
  std::uniform_int_distribution<std::uint32_t> tok(kSepId + 1,
                                                   static_cast<std::uint32_t>(cfg.vocab_size - 1));
  const std::size_t m = cfg.segment_body_len;
  std::uniform_int_distribution<std::size_t> tail(1, m);
  auto tokens = [&](std::size_t n) {
    std::vector<std::uint32_t> v(n);
    for (auto& t : v) t = tok(rng);
    return v;
  };
  const std::size_t n = s.batch_size + s.cache_entries;
  std::vector<std::vector<std::uint32_t>> queries, docs;
  for (std::size_t i = 0; i < n; ++i) {
    queries.push_back(tokens(1 + rng() % m));
    for (int j = 0; j < 2; ++j) docs.push_back(tokens((s.segments - 1) * m + tail(rng)));
  }
  std::vector<TrainingExample> examples;
  for (std::size_t i = 0; i < n; ++i) examples.push_back({queries[i], docs[2 * i], docs[2 * i + 1]});

  BiEncoder model = BiEncoder::init(cfg, s.seed + 1);
  LateCacheQueue cache(s.cache_entries);
  AdamState state;
  for (std::size_t i = 0; i < s.cache_entries; ++i)
    train_step(model, std::span(examples).subspan(s.batch_size + i, 1), cache, state, {});

  const std::span<const TrainingExample> batch(examples.data(), s.batch_size);
  auto f = [&] {
    std::vector<EncodedInstance> enc;
    for (const auto& ex : batch) enc.push_back(encode_instance(ex, model));
    return batch_loss(enc, cache);
  };
  GradCheckOptions opt;
  opt.num_coords = s.num_coords;
  opt.seed = s.seed;
  return grad_check(f, model.parameters(), opt);
}

struct DispersionReport {
  double mean = 0.0;
  std::size_t documents = 0;  // multi-segment documents averaged over
};

/// Mean segment_dispersion over documents with at least two segments.
inline DispersionReport mean_dispersion(const BiEncoder& model, const std::vector<DocumentRecord>& docs) {
  DispersionReport r;
  NoGradScope no_grad;
  for (const auto& d : docs) {
    if (d.token_ids.size() <= model.config.segment_body_len) continue;
    const Tensor segs = encode_document(d, model.doc, model.config);
    if (segs.rows() < 2) continue;
    r.mean += segment_dispersion(segs);
    ++r.documents;
  }
  if (r.documents) r.mean /= static_cast<double>(r.documents);
  return r;
}

}  // namespace sedr
