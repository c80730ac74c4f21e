#pragma once

// Contrastive bi-encoder training: max-pooled segment scoring, InfoNCE over
// in-batch, hard and cached negatives, the late-cache queue with its anchor
// losses, Adam, and the epoch loop.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "sedr/config.hpp"
#include "sedr/encoder.hpp"
#include "sedr/error.hpp"
#include "sedr/tensor.hpp"

namespace sedr {

// --------------------------------------------------------------------------
// Scoring

struct SegmentScore {
  double score = 0.0;
  std::size_t best_segment = 0;
};

/// max_i <q, seg_i>; ties go to the lowest segment index.
inline SegmentScore score(std::span<const double> q, const Tensor& segs) {
  SEDR_REQUIRE(segs.defined() && segs.rows() >= 1, "score: no segment vectors");
  SEDR_REQUIRE_AS(DimensionError, segs.cols() == q.size(), "score: query dim ", q.size(),
                  " vs segment dim ", segs.cols());
  const std::size_t d = q.size();
  auto s = segs.data();
  SegmentScore best;
  for (std::size_t i = 0; i < segs.rows(); ++i) {
    double v = 0.0;
    for (std::size_t j = 0; j < d; ++j) v += q[j] * s[i * d + j];
    if (i == 0 || v > best.score) best = {v, i};
  }
  return best;
}

inline SegmentScore score(const Tensor& q, const Tensor& segs) {
  SEDR_REQUIRE_AS(DimensionError, q.rows() == 1, "score: query must be a single vector, got ",
                  detail::shape_str(q.shape()));
  return score(q.data(), segs);
}

/// Differentiable max-pooled score; backward routes through the argmax segment.
inline Tensor max_score(const Tensor& q, const Tensor& segs) {
  const SegmentScore s = score(q, segs);
  Tape* tape = autograd::recording({&q, &segs});
  Tensor y = autograd::result({1}, {s.score}, tape);
  if (tape) {
    tape->record("max_score", y, [q, segs, y, best = s.best_segment]() {
      const double g = y.grad()[0];
      const std::size_t d = q.size();
      if (q.requires_grad()) {
        auto dq = q.mutable_grad();
        for (std::size_t j = 0; j < d; ++j) dq[j] += g * segs.at(best * d + j);
      }
      if (segs.requires_grad()) {
        auto ds = segs.mutable_grad();
        for (std::size_t j = 0; j < d; ++j) ds[best * d + j] += g * q.at(j);
      }
    });
  }
  return y;
}

/// -log softmax(scores)[0]: scores[0] is the positive, the rest are negatives.
inline Tensor info_nce_scores(std::span<const Tensor> scores) {
  SEDR_REQUIRE(scores.size() >= 2, "info_nce: needs at least one negative");
  double mx = scores[0].item();
  for (const auto& s : scores) mx = std::max(mx, s.item());
  double z = 0.0;
  for (const auto& s : scores) z += std::exp(s.item() - mx);
  const double loss = mx + std::log(z) - scores[0].item();
  SEDR_REQUIRE_AS(NumericalError, std::isfinite(loss), "info_nce: non-finite loss");
  Tape* tape = autograd::recording(scores);
  Tensor y = autograd::result({1}, {loss}, tape);
  if (tape) {
    std::vector<Tensor> inputs(scores.begin(), scores.end());
    tape->record("info_nce", y, [inputs, y, mx, z]() {
      const double g = y.grad()[0];
      for (std::size_t i = 0; i < inputs.size(); ++i) {
        if (!inputs[i].requires_grad()) continue;
        const double p = std::exp(inputs[i].item() - mx) / z;
        inputs[i].mutable_grad()[0] += g * (p - (i == 0 ? 1.0 : 0.0));
      }
    });
  }
  return y;
}

inline Tensor info_nce(const Tensor& q, const Tensor& positive, std::span<const Tensor> negatives) {
  SEDR_REQUIRE(!negatives.empty(), "info_nce: empty negative set");
  std::vector<Tensor> scores;
  scores.reserve(negatives.size() + 1);
  scores.push_back(max_score(q, positive));
  for (const auto& n : negatives) scores.push_back(max_score(q, n));
  return info_nce_scores(scores);
}

// --------------------------------------------------------------------------
// Late-cache queue

/// Detached snapshot of one trained instance.
struct CacheEntry {
  Tensor query;     // 1 x d
  Tensor positive;  // k+ x d
  Tensor negative;  // k- x d
  std::uint64_t step_created = 0;
};

/// Bounded FIFO of detached representations from earlier steps.
class LateCacheQueue {
 public:
  explicit LateCacheQueue(std::size_t capacity = 16) : capacity_(capacity) {}

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const CacheEntry& operator[](std::size_t i) const { return entries_[i]; }
  const std::deque<CacheEntry>& entries() const { return entries_; }

  /// Appends a snapshot of the given tensors, evicting the oldest beyond capacity.
  void push(const Tensor& query, const Tensor& positive, const Tensor& negative,
            std::uint64_t step) {
    if (capacity_ == 0) return;
    SEDR_REQUIRE(positive.rows() >= 1 && negative.rows() >= 1, "cache entry without segments");
    entries_.push_back({query.detach(), positive.detach(), negative.detach(), step});
    while (entries_.size() > capacity_) entries_.pop_front();
  }

  void clear() { entries_.clear(); }

 private:
  std::size_t capacity_;
  std::deque<CacheEntry> entries_;
};

// --------------------------------------------------------------------------
// Batch losses

/// Encoded training instance: query 1 x d, positive and hard negative k x d.
struct EncodedInstance {
  Tensor query;
  Tensor positive;
  Tensor negative;
};

/// Own hard negative, then (d+, d-) of every other batch instance in batch
/// order, then (d+, d-) of every cache entry oldest first.
inline std::vector<Tensor> assemble_negatives(std::size_t instance,
                                              std::span<const EncodedInstance> batch,
                                              const LateCacheQueue& cache) {
  SEDR_REQUIRE(instance < batch.size(), "assemble_negatives: instance ", instance,
               " outside batch of ", batch.size());
  std::vector<Tensor> negs;
  negs.reserve(1 + 2 * (batch.size() - 1) + 2 * cache.size());
  negs.push_back(batch[instance].negative);
  for (std::size_t j = 0; j < batch.size(); ++j) {
    if (j == instance) continue;
    negs.push_back(batch[j].positive);
    negs.push_back(batch[j].negative);
  }
  for (const auto& e : cache.entries()) {
    negs.push_back(e.positive);
    negs.push_back(e.negative);
  }
  return negs;
}

/// Anchor loss of a cached query: its own cached negative, every current batch
/// document, then the documents of the other cache entries. Only the batch
/// documents carry gradient.
inline Tensor cache_query_loss(std::size_t entry, std::span<const EncodedInstance> batch,
                               const LateCacheQueue& cache) {
  SEDR_REQUIRE(entry < cache.size(), "cache_query_loss: entry ", entry, " outside cache of ",
               cache.size());
  const CacheEntry& e = cache[entry];
  std::vector<Tensor> negs;
  negs.reserve(1 + 2 * batch.size() + 2 * (cache.size() - 1));
  negs.push_back(e.negative);
  for (const auto& b : batch) {
    negs.push_back(b.positive);
    negs.push_back(b.negative);
  }
  for (std::size_t j = 0; j < cache.size(); ++j) {
    if (j == entry) continue;
    negs.push_back(cache[j].positive);
    negs.push_back(cache[j].negative);
  }
  return info_nce(e.query, e.positive, negs);
}

/// Sum of the batch instances' losses plus, when enabled, every cached query's anchor loss.
inline Tensor batch_loss(std::span<const EncodedInstance> batch, const LateCacheQueue& cache,
                         bool cache_query_terms = true) {
  SEDR_REQUIRE(!batch.empty(), "batch_loss: empty batch");
  std::vector<Tensor> terms;
  for (std::size_t i = 0; i < batch.size(); ++i)
    terms.push_back(info_nce(batch[i].query, batch[i].positive,
                             assemble_negatives(i, batch, cache)));
  if (cache_query_terms)
    for (std::size_t e = 0; e < cache.size(); ++e)
      terms.push_back(cache_query_loss(e, batch, cache));
  return sum_scalars(terms);
}

// --------------------------------------------------------------------------
// Optimizer

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::uint64_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

/// Bias-corrected Adam on the gradient buffers of `params`; a missing buffer counts as zero.
inline void adam_step(std::span<Tensor> params, AdamState& state, const AdamOptions& opt) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.size(), 0.0);
      state.v.emplace_back(p.size(), 0.0);
    }
  }
  SEDR_REQUIRE(state.m.size() == params.size(), "adam_step: state tracks ", state.m.size(),
               " tensors, got ", params.size());
  ++state.step;
  const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(state.step));
  for (std::size_t t = 0; t < params.size(); ++t) {
    Tensor& p = params[t];
    SEDR_REQUIRE(state.m[t].size() == p.size(), "adam_step: tensor ", t, " changed size");
    auto w = p.mutable_data();
    auto g = p.grad();
    const bool has = g.size() == w.size();
    auto& m = state.m[t];
    auto& v = state.v[t];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = has ? g[i] : 0.0;
      m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * gi;
      v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * gi * gi;
      w[i] -= opt.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + opt.eps);
    }
  }
}

// --------------------------------------------------------------------------
// Training loop

/// One (query, positive, hard negative) triple resolved to token lists.
struct TrainingExample {
  std::span<const std::uint32_t> query;
  std::span<const std::uint32_t> positive;
  std::span<const std::uint32_t> negative;
};

/// Identifiers of a training triple as stored in the triples file.
struct TrainingInstance {
  std::uint64_t query_id = 0;
  std::uint64_t positive_id = 0;
  std::uint64_t negative_id = 0;
};

struct StepResult {
  double loss = 0.0;
  std::size_t cache_fill = 0;
};

inline EncodedInstance encode_instance(const TrainingExample& ex, const BiEncoder& model) {
  return {encode_query(ex.query, model.query, model.config),
          encode_document(ex.positive, model.doc, model.config),
          encode_document(ex.negative, model.doc, model.config)};
}

/// Forward, loss, backward and update, then enqueue the step's detached
/// representations. Throws NumericalError before updating on a non-finite loss.
inline StepResult train_step(BiEncoder& model, std::span<const TrainingExample> batch,
                             LateCacheQueue& cache, AdamState& opt_state, const AdamOptions& opt,
                             bool cache_query_terms = true) {
  auto params = model.parameters();
  for (auto& p : params) p.zero_grad();
  Tape tape;
  std::vector<EncodedInstance> encoded;
  double loss_value;
  {
    TapeScope scope(tape);
    for (const auto& ex : batch) encoded.push_back(encode_instance(ex, model));
    Tensor loss = batch_loss(encoded, cache, cache_query_terms);
    loss_value = loss.item();
    SEDR_REQUIRE_AS(NumericalError, std::isfinite(loss_value), "non-finite loss at step ",
                    opt_state.step + 1);
    tape.backward(loss);
  }
  tape.clear();
  adam_step(params, opt_state, opt);
  for (const auto& e : encoded) cache.push(e.query, e.positive, e.negative, opt_state.step);
  return {loss_value, cache.size()};
}

struct TrainResult {
  std::vector<double> losses;
  double seconds = 0.0;
  std::vector<double> epoch_seconds;
};

using StepCallback = std::function<void(std::size_t step, const StepResult&)>;
/// Called before each epoch; may rewrite the examples (e.g. to resample negatives).
using EpochHook = std::function<void(std::size_t epoch, std::vector<TrainingExample>&)>;

/// Shuffled mini-batches over `epochs` passes; the last batch of an epoch may be short.
inline TrainResult train(BiEncoder& model, std::vector<TrainingExample> examples,
                         const TrainConfig& cfg, const StepCallback& on_step = {},
                         const EpochHook& on_epoch = {}) {
  SEDR_REQUIRE(cfg.batch_size >= 1, "train: batch size must be >= 1");
  SEDR_REQUIRE(!examples.empty(), "train: no training examples");
  std::mt19937_64 rng(cfg.seed);
  LateCacheQueue cache(cfg.cache_size);
  AdamState state;
  AdamOptions opt;
  opt.learning_rate = cfg.learning_rate;
  TrainResult res;
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<std::size_t> order(examples.size());
  std::vector<TrainingExample> batch;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto e0 = std::chrono::steady_clock::now();
    if (on_epoch) on_epoch(epoch, examples);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      batch.clear();
      for (std::size_t i = b; i < std::min(order.size(), b + cfg.batch_size); ++i)
        batch.push_back(examples[order[i]]);
      const StepResult r = train_step(model, batch, cache, state, opt, cfg.cache_query_loss);
      res.losses.push_back(r.loss);
      if (on_step) on_step(res.losses.size(), r);
    }
    res.epoch_seconds.push_back(
        std::chrono::duration<double>(std::chrono::steady_clock::now() - e0).count());
  }
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

}  // namespace sedr
