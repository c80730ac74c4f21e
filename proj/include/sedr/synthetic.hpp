#pragma once

// Synthetic long-document retrieval task. Each segment mixes a few topics
// whose token pools are disjoint; each query copies distinct topic tokens from
// exactly one planted segment of its single relevant document, so the
// relevant segment ordinal is the controlled variable.

#include <algorithm>
#include <cstdint>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "sedr/corpus_io.hpp"
#include "sedr/error.hpp"
#include "sedr/metrics.hpp"
#include "sedr/training.hpp"

namespace sedr {

struct SyntheticCorpusConfig {
  std::size_t num_docs = 2000;
  std::vector<double> segment_count_weights{1, 1, 1, 1};  // weight of k = i + 1
  std::size_t vocab_size = 4096;
  std::size_t segment_body_len = 32;
  std::size_t num_queries = 500;
  std::size_t num_train_queries = 400;
  std::vector<double> relevant_position_weights{1, 1, 1, 1};  // weight of ordinal i
  std::size_t topic_pool_size = 4;
  std::size_t topics_per_segment = 3;
  std::size_t noise_vocab = 96;  // ids right after the reserved ones
  double noise_rate = 0.25;
  std::size_t query_len = 5;
  std::uint64_t seed = 0;

  std::size_t num_topics() const {
    const std::size_t usable = vocab_size > 3 + noise_vocab ? vocab_size - 3 - noise_vocab : 0;
    return topic_pool_size ? usable / topic_pool_size : 0;
  }
};

struct SyntheticCorpus {
  std::vector<DocumentRecord> docs;
  std::vector<QueryRecord> queries;  // train queries first, then test
  std::size_t num_train = 0;
  Qrels qrels;
  QueryMetaTable meta;
  std::vector<TrainingInstance> train_triples;  // uniformly random negatives
  /// planted_pool[q]: the union of topic pools of query q's planted segment.
  std::vector<std::vector<std::uint32_t>> planted_pool;

  std::vector<QueryRecord> train_queries() const {
    return {queries.begin(), queries.begin() + static_cast<std::ptrdiff_t>(num_train)};
  }
  std::vector<QueryRecord> test_queries() const {
    return {queries.begin() + static_cast<std::ptrdiff_t>(num_train), queries.end()};
  }
  Qrels qrels_for(const std::vector<QueryRecord>& qs) const {
    Qrels out;
    for (const auto& q : qs) out[std::to_string(q.id)] = qrels.at(std::to_string(q.id));
    return out;
  }
};

inline SyntheticCorpus generate_corpus(const SyntheticCorpusConfig& cfg) {
  const std::size_t m = cfg.segment_body_len;
  const std::size_t max_k = cfg.segment_count_weights.size();
  const std::size_t topics = cfg.num_topics();
  SEDR_REQUIRE_AS(ConfigError, m >= 2 && max_k >= 1, "synthetic: bad segment shape");
  SEDR_REQUIRE_AS(ConfigError, cfg.noise_vocab >= 1 || cfg.noise_rate == 0.0,
                  "synthetic: noise_rate > 0 needs a noise vocabulary");
  SEDR_REQUIRE_AS(ConfigError, topics >= cfg.topics_per_segment && cfg.topics_per_segment >= 1,
                  "synthetic: vocabulary of ", cfg.vocab_size, " holds only ", topics,
                  " distinct topics of ", cfg.topic_pool_size, " tokens, need at least ",
                  cfg.topics_per_segment);
  SEDR_REQUIRE_AS(ConfigError, cfg.num_queries <= cfg.num_docs,
                  "synthetic: each query needs its own relevant document");
  SEDR_REQUIRE_AS(ConfigError, cfg.num_train_queries <= cfg.num_queries,
                  "synthetic: more train queries than queries");
  SEDR_REQUIRE_AS(ConfigError, cfg.relevant_position_weights.size() <= max_k,
                  "synthetic: relevant ordinals beyond the largest segment count");
  SEDR_REQUIRE_AS(ConfigError, cfg.query_len >= 1, "synthetic: empty queries");

  std::mt19937_64 rng(cfg.seed);
  const auto noise_base = static_cast<std::uint32_t>(kSepId + 1);
  const auto topic_base = static_cast<std::uint32_t>(noise_base + cfg.noise_vocab);
  auto topic_token = [&](std::size_t topic, std::size_t i) {
    return static_cast<std::uint32_t>(topic_base + topic * cfg.topic_pool_size + i);
  };

  std::discrete_distribution<std::size_t> seg_count(cfg.segment_count_weights.begin(),
                                                    cfg.segment_count_weights.end());
  std::uniform_int_distribution<std::size_t> pick_topic(0, topics - 1);
  std::uniform_int_distribution<std::size_t> pick_pool(0, cfg.topic_pool_size - 1);
  std::uniform_int_distribution<std::size_t> last_len((m + 1) / 2, m);
  std::uniform_int_distribution<std::size_t> pick_noise(0, cfg.noise_vocab ? cfg.noise_vocab - 1 : 0);
  std::bernoulli_distribution is_noise(cfg.noise_rate);

  SyntheticCorpus out;
  std::vector<std::size_t> doc_segments(cfg.num_docs);
  std::vector<std::vector<std::vector<std::size_t>>> seg_topics(cfg.num_docs);
  for (std::size_t d = 0; d < cfg.num_docs; ++d) {
    const std::size_t k = seg_count(rng) + 1;
    doc_segments[d] = k;
    DocumentRecord doc;
    doc.id = d + 1;
    for (std::size_t s = 0; s < k; ++s) {
      std::vector<std::size_t> ts;
      while (ts.size() < cfg.topics_per_segment) {
        const std::size_t t = pick_topic(rng);
        if (std::find(ts.begin(), ts.end(), t) == ts.end()) ts.push_back(t);
      }
      std::uniform_int_distribution<std::size_t> which(0, ts.size() - 1);
      const std::size_t len = s + 1 < k ? m : last_len(rng);
      for (std::size_t i = 0; i < len; ++i) {
        if (is_noise(rng))
          doc.token_ids.push_back(static_cast<std::uint32_t>(noise_base + pick_noise(rng)));
        else
          doc.token_ids.push_back(topic_token(ts[which(rng)], pick_pool(rng)));
      }
      seg_topics[d].push_back(std::move(ts));
    }
    out.docs.push_back(std::move(doc));
  }

  std::discrete_distribution<std::size_t> rel_pos(cfg.relevant_position_weights.begin(),
                                                  cfg.relevant_position_weights.end());
  std::vector<bool> used(cfg.num_docs, false);
  for (std::size_t q = 0; q < cfg.num_queries; ++q) {
    const std::size_t r = rel_pos(rng);
    std::vector<std::size_t> candidates;
    for (std::size_t d = 0; d < cfg.num_docs; ++d)
      if (!used[d] && doc_segments[d] > r) candidates.push_back(d);
    SEDR_REQUIRE_AS(ConfigError, !candidates.empty(), "synthetic: no unused document with more than ",
                    r, " segments for query ", q + 1);
    const std::size_t d = candidates[std::uniform_int_distribution<std::size_t>(
        0, candidates.size() - 1)(rng)];
    used[d] = true;

    const auto& toks = out.docs[d].token_ids;
    const std::size_t begin = r * m, end = std::min(toks.size(), begin + m);
    std::vector<std::uint32_t> pool;
    for (std::size_t t : seg_topics[d][r])
      for (std::size_t i = 0; i < cfg.topic_pool_size; ++i) pool.push_back(topic_token(t, i));
    std::sort(pool.begin(), pool.end());
    std::set<std::uint32_t> present;
    for (std::size_t i = begin; i < end; ++i)
      if (std::binary_search(pool.begin(), pool.end(), toks[i])) present.insert(toks[i]);
    SEDR_REQUIRE_AS(ConfigError, !present.empty(), "synthetic: planted segment without topic tokens");
    std::vector<std::uint32_t> qt(present.begin(), present.end());
    std::shuffle(qt.begin(), qt.end(), rng);
    qt.resize(std::min(qt.size(), cfg.query_len));

    QueryRecord query{q + 1, std::move(qt)};
    const std::string qid = std::to_string(query.id);
    out.qrels[qid][std::to_string(out.docs[d].id)] = 1;
    out.meta[qid] = {out.docs[d].id, toks.size(), r};
    out.queries.push_back(std::move(query));
    out.planted_pool.push_back(std::move(pool));
  }
  out.num_train = cfg.num_train_queries;

  std::uniform_int_distribution<std::size_t> any_doc(0, cfg.num_docs - 1);
  for (std::size_t q = 0; q < out.num_train; ++q) {
    const std::uint64_t pos = out.meta.at(std::to_string(out.queries[q].id)).positive_doc;
    std::uint64_t neg = pos;
    while (neg == pos && cfg.num_docs > 1) neg = out.docs[any_doc(rng)].id;
    if (neg != pos) out.train_triples.push_back({out.queries[q].id, pos, neg});
  }
  return out;
}

/// Writes corpus.tsv, queries.tsv, train_queries.tsv, test_queries.tsv,
/// qrels{,_train,_test}.txt, split.tsv, metadata.tsv and train_triples.tsv.
inline std::vector<std::string> write_synthetic_corpus(const SyntheticCorpus& c,
                                                       const std::string& dir) {
  std::vector<std::string> files;
  auto path = [&](const char* name) {
    files.push_back(dir + "/" + name);
    return files.back();
  };
  write_records(path("corpus.tsv"), c.docs);
  write_records(path("queries.tsv"), c.queries);
  const auto train = c.train_queries(), test = c.test_queries();
  write_records(path("train_queries.tsv"), train);
  write_records(path("test_queries.tsv"), test);
  {
    auto out = text::open_output(path("qrels.txt"));
    write_qrels(out, c.qrels);
  }
  {
    auto out = text::open_output(path("qrels_train.txt"));
    write_qrels(out, c.qrels_for(train));
  }
  {
    auto out = text::open_output(path("qrels_test.txt"));
    write_qrels(out, c.qrels_for(test));
  }
  {
    auto out = text::open_output(path("split.tsv"));
    for (std::size_t i = 0; i < c.queries.size(); ++i)
      out << c.queries[i].id << '\t' << (i < c.num_train ? "train" : "test") << '\n';
  }
  {
    auto out = text::open_output(path("metadata.tsv"));
    for (const auto& q : c.queries) {
      const auto& m = c.meta.at(std::to_string(q.id));
      out << q.id << '\t' << m.positive_doc << '\t' << m.doc_length << '\t' << m.relevant_ordinal
          << '\n';
    }
  }
  write_triples(path("train_triples.tsv"), c.train_triples);
  return files;
}

}  // namespace sedr
