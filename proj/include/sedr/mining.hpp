#pragma once

// Static hard-negative mining with a warm model, and random negatives for warm-up.

#include <algorithm>
#include <cstdint>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "sedr/encoder.hpp"
#include "sedr/error.hpp"
#include "sedr/index.hpp"
#include "sedr/log.hpp"
#include "sedr/metrics.hpp"
#include "sedr/training.hpp"

namespace sedr {

/// Judged-positive doc ids per query id.
inline std::set<std::uint64_t> positives_of(const Qrels& qrels, std::uint64_t qid) {
  std::set<std::uint64_t> out;
  auto it = qrels.find(std::to_string(qid));
  if (it == qrels.end()) return out;
  for (const auto& [doc, rel] : it->second) {
    std::uint64_t id;
    if (rel > 0 && text::parse_number(doc, id)) out.insert(id);
  }
  return out;
}

/// One triple per (query, positive): the negative is uniform over the query's
/// top-K non-positive documents. Queries are processed in input order with one
/// rng stream, so a fixed seed fixes the map.
inline std::vector<TrainingInstance> mine_hard_negatives(const BiEncoder& model,
                                                         const SegmentIndex& index,
                                                         const std::vector<QueryRecord>& queries,
                                                         const Qrels& qrels, std::size_t hardness,
                                                         std::uint64_t seed,
                                                         std::size_t threads = 1) {
  SEDR_REQUIRE(hardness >= 1, "mine_hard_negatives: hardness must be at least 1");
  std::set<std::uint64_t> docs(index.doc_ids.begin(), index.doc_ids.end());
  if (hardness > docs.size()) {
    log::warn(detail::concat("hardness ", hardness, " exceeds the ", docs.size(),
                             " indexed documents; clamped"));
    hardness = docs.size();
  }
  const auto qvecs = encode_queries(model.query, model.config, queries, threads);
  std::vector<std::set<std::uint64_t>> pos(queries.size());
  std::size_t widest = 0;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    pos[i] = positives_of(qrels, queries[i].id);
    widest = std::max(widest, pos[i].size());
  }
  const auto hits = batch_search(index, qvecs, hardness + widest, threads);

  std::mt19937_64 rng(seed);
  std::vector<TrainingInstance> out;
  std::size_t unjudged = 0;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    if (pos[i].empty()) {
      ++unjudged;
      continue;
    }
    std::vector<std::uint64_t> pool;
    for (const auto& h : hits[i]) {
      if (pool.size() == hardness) break;
      if (!pos[i].count(h.doc_id)) pool.push_back(h.doc_id);
    }
    if (pool.empty()) {
      log::warn(detail::concat("query ", queries[i].id, " has no non-positive candidate; skipped"));
      continue;
    }
    for (std::uint64_t p : pos[i]) {
      const std::uint64_t neg =
          pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
      out.push_back({queries[i].id, p, neg});
    }
  }
  if (unjudged)
    log::warn(detail::concat(unjudged, " queries have no judged positive; skipped"));
  return out;
}

/// One triple per (query, positive) with a uniformly random non-positive corpus document.
inline std::vector<TrainingInstance> random_negatives(const std::vector<QueryRecord>& queries,
                                                      const std::vector<DocumentRecord>& corpus,
                                                      const Qrels& qrels, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<TrainingInstance> out;
  SEDR_REQUIRE(corpus.size() >= 2, "random_negatives: corpus needs at least two documents");
  std::uniform_int_distribution<std::size_t> any(0, corpus.size() - 1);
  for (const auto& q : queries) {
    const auto pos = positives_of(qrels, q.id);
    if (pos.size() >= corpus.size()) continue;
    for (std::uint64_t p : pos) {
      std::uint64_t neg;
      do neg = corpus[any(rng)].id;
      while (pos.count(neg));
      out.push_back({q.id, p, neg});
    }
  }
  return out;
}

}  // namespace sedr
