#pragma once

// Training on a corpus: an optional pseudo-query segment warm-up, a phase on
// random negatives, then static hard negatives mined with the warm model.

#include <chrono>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "sedr/config.hpp"
#include "sedr/corpus_io.hpp"
#include "sedr/encoder.hpp"
#include "sedr/index.hpp"
#include "sedr/metrics.hpp"
#include "sedr/mining.hpp"
#include "sedr/pretraining.hpp"
#include "sedr/training.hpp"

namespace sedr {

struct PipelineConfig {
  PretrainConfig pretrain;  // steps 0 skips it
  TrainConfig warmup;       // random-negative phase; epochs 0 skips it
  TrainConfig hard;         // hard-negative phase; epochs 0 skips it
  std::uint64_t init_seed = 0;
  std::uint64_t negative_seed = 0;
  std::size_t threads = 1;
};

struct PipelineResult {
  BiEncoder model;
  std::vector<double> losses;  // both phases, in step order
  double train_seconds = 0.0;  // all phases
  std::vector<double> epoch_seconds;
  std::vector<double> pretrain_losses;
};

/// The corpus, queries and qrels a pipeline trains on.
struct TrainingData {
  const std::vector<DocumentRecord>* docs = nullptr;
  const std::vector<QueryRecord>* queries = nullptr;
  const Qrels* qrels = nullptr;
};

inline std::vector<TrainingExample> resolve(const std::vector<TrainingInstance>& ts,
                                            const TrainingData& data) {
  return resolve_triples(ts, RecordIndex(*data.queries), RecordIndex(*data.docs));
}

/// Trains `model` in place of a fresh initialization, e.g. a shared warm-up checkpoint.
inline PipelineResult train_pipeline(BiEncoder model, const TrainingData& data,
                                     const PipelineConfig& pc,
                                     const StepCallback& on_step = {}) {
  const EncoderConfig cfg = model.config;
  cfg.validate();
  PipelineResult out{std::move(model), {}, 0.0, {}, {}};
  const PretrainResult pre = pretrain_segments(out.model, *data.docs, pc.pretrain);
  out.pretrain_losses = pre.losses;
  out.train_seconds += pre.seconds;
  auto run = [&](const std::vector<TrainingInstance>& triples, const TrainConfig& tc) {
    if (tc.epochs == 0 || triples.empty()) return;
    const TrainResult r = train(out.model, resolve(triples, data), tc, [&](std::size_t, const StepResult& s) {
      out.losses.push_back(s.loss);
      if (on_step) on_step(out.losses.size(), s);
    });
    out.train_seconds += r.seconds;
    out.epoch_seconds.insert(out.epoch_seconds.end(), r.epoch_seconds.begin(), r.epoch_seconds.end());
  };
  run(random_negatives(*data.queries, *data.docs, *data.qrels, pc.negative_seed), pc.warmup);
  if (pc.hard.epochs > 0) {
    const SegmentIndex idx = build_index(out.model.doc, cfg, *data.docs, pc.threads);
    run(mine_hard_negatives(out.model, idx, *data.queries, *data.qrels, pc.hard.hardness,
                            pc.negative_seed + 1, pc.threads),
        pc.hard);
  }
  return out;
}

inline PipelineResult train_pipeline(const EncoderConfig& cfg, const TrainingData& data,
                                     const PipelineConfig& pc,
                                     const StepCallback& on_step = {}) {
  cfg.validate();
  return train_pipeline(BiEncoder::init(cfg, pc.init_seed), data, pc, on_step);
}

/// The same parameters under another interaction pattern. Patterns other than
/// the head variant share one parameter set; switching to or from it adds or
/// drops the freshly initialized head layer.
inline BiEncoder with_pattern(const BiEncoder& model, InteractionPattern pattern, std::uint64_t seed) {
  BiEncoder out = model.clone();
  out.config.pattern = pattern;
  const bool head = pattern == InteractionPattern::transformer_head;
  if (!head) {
    out.doc.head.clear();
  } else if (out.doc.head.empty()) {
    std::mt19937_64 rng(seed);
    out.doc.head = ModelParameters::init(out.config, rng, true).head;
  }
  if (out.config.tie_encoders) {
    out.query = out.doc;
    out.query.head.clear();
  }
  return out;
}

/// Top-n TREC-style run for `queries` over an index built from `docs`.
inline Run retrieve(const BiEncoder& model, const std::vector<DocumentRecord>& docs,
                    const std::vector<QueryRecord>& queries, std::size_t top_n = 100,
                    std::size_t threads = 1) {
  const SegmentIndex idx = build_index(model.doc, model.config, docs, threads);
  const auto qv = encode_queries(model.query, model.config, queries, threads);
  const auto hits = batch_search(idx, qv, top_n, threads);
  Run run;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    auto& entries = run[std::to_string(queries[i].id)];
    for (std::size_t r = 0; r < hits[i].size(); ++r)
      entries.push_back({std::to_string(hits[i][r].doc_id), static_cast<int>(r + 1), hits[i][r].score});
  }
  return run;
}

}  // namespace sedr
