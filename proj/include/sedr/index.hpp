#pragma once

// Flat segment-vector index: one f32 record per document segment, exact
// inner-product scan with per-document max pooling.
//
// File layout: "SEDRIDX1", u32 version (1), u32 dim, u64 record count, then
// records of u64 doc_id, u16 seg_ord, dim x f32, all little-endian.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <functional>
#include <ostream>
#include <span>
#include <string>
#include <thread>
#include <unordered_map>
#include <set>
#include <utility>
#include <vector>

#include "sedr/binary_io.hpp"
#include "sedr/encoder.hpp"
#include "sedr/error.hpp"
#include "sedr/log.hpp"

namespace sedr {

inline constexpr std::string_view kIndexMagic = "SEDRIDX1";
inline constexpr std::uint32_t kIndexVersion = 1;

struct SegmentIndex {
  std::size_t dim = 0;
  std::vector<std::uint64_t> doc_ids;
  std::vector<std::uint16_t> seg_ords;
  std::vector<float> vectors;  // size() x dim

  std::size_t size() const { return doc_ids.size(); }
  std::span<const float> vec(std::size_t i) const {
    return std::span(vectors).subspan(i * dim, dim);
  }

  /// Appends one record per row of `segs` (k x dim), seg_ord = row.
  void add(std::uint64_t doc_id, const Tensor& segs) {
    if (dim == 0 && size() == 0) dim = segs.cols();
    SEDR_REQUIRE_AS(DimensionError, segs.cols() == dim, "index: vector dim ", segs.cols(),
                    " vs index dim ", dim);
    SEDR_REQUIRE(segs.rows() <= 65536, "index: too many segments for a u16 ordinal");
    for (std::size_t s = 0; s < segs.rows(); ++s) {
      doc_ids.push_back(doc_id);
      seg_ords.push_back(static_cast<std::uint16_t>(s));
      for (std::size_t j = 0; j < dim; ++j) vectors.push_back(static_cast<float>(segs.at(s, j)));
    }
  }
};

struct RetrievalHit {
  std::uint64_t doc_id = 0;
  double score = 0.0;
  std::uint16_t best_seg = 0;

  bool operator==(const RetrievalHit&) const = default;
};

/// Score descending, then doc_id ascending.
inline bool hit_before(const RetrievalHit& a, const RetrievalHit& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.doc_id < b.doc_id;
}

/// Runs fn(i) for i in [0, n) over up to `threads` workers with contiguous chunks.
inline void parallel_for(std::size_t n, std::size_t threads,
                         const std::function<void(std::size_t)>& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  const std::size_t chunk = (n + threads - 1) / threads;
  for (std::size_t t = 0; t < threads; ++t)
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t * chunk; i < std::min(n, (t + 1) * chunk); ++i) fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

struct BuildReport {
  std::size_t encoded = 0;
  std::vector<std::string> failures;  // one message per skipped document
};

/// Encodes every document with the document encoder; records follow corpus
/// order, then segment ordinal. Documents that fail to encode are skipped and reported.
inline SegmentIndex build_index(const ModelParameters& doc_params, const EncoderConfig& cfg,
                                const std::vector<DocumentRecord>& corpus, std::size_t threads = 1,
                                BuildReport* report = nullptr) {
  std::vector<Tensor> encoded(corpus.size());
  std::vector<std::string> errors(corpus.size());
  parallel_for(corpus.size(), threads, [&](std::size_t i) {
    NoGradScope no_grad;
    try {
      encoded[i] = encode_document(corpus[i], doc_params, cfg);
    } catch (const std::exception& e) {
      errors[i] = detail::concat("document ", corpus[i].id, ": ", e.what());
    }
  });
  SegmentIndex index;
  index.dim = cfg.hidden_dim;
  BuildReport local;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (!errors[i].empty()) {
      log::warn(errors[i]);
      local.failures.push_back(errors[i]);
      continue;
    }
    index.add(corpus[i].id, encoded[i]);
    ++local.encoded;
  }
  if (report) *report = std::move(local);
  return index;
}

// --------------------------------------------------------------------------
// Serialization

inline std::string serialize_index(const SegmentIndex& index) {
  binary::Writer w;
  w.bytes(kIndexMagic);
  w.u32(kIndexVersion);
  w.u32(static_cast<std::uint32_t>(index.dim));
  w.u64(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    w.u64(index.doc_ids[i]);
    w.u16(index.seg_ords[i]);
    for (float v : index.vec(i)) w.f32(v);
  }
  return w.data();
}

inline SegmentIndex deserialize_index(std::string bytes, const std::string& what = "index") {
  binary::Reader r(std::move(bytes), what);
  r.expect(kIndexMagic);
  if (const auto ver = r.u32(); ver != kIndexVersion)
    r.fail(detail::concat("unsupported version ", ver));
  SegmentIndex index;
  index.dim = r.u32();
  const std::uint64_t count = r.u64();
  const std::size_t record_bytes = 8 + 2 + 4 * index.dim;
  std::set<std::pair<std::uint64_t, std::uint16_t>> seen;
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::size_t at = r.offset();
    r.need(record_bytes);
    const auto doc = r.u64();
    const auto seg = r.u16();
    if (!seen.emplace(doc, seg).second)
      throw FormatError(detail::concat(what, ": duplicate record (", doc, ", ", seg,
                                       ") at byte offset ", at));
    index.doc_ids.push_back(doc);
    index.seg_ords.push_back(seg);
    for (std::size_t j = 0; j < index.dim; ++j) index.vectors.push_back(r.f32());
  }
  if (!r.at_end()) r.fail("trailing bytes after last record");
  return index;
}

inline void save_index(const SegmentIndex& index, const std::string& path) {
  binary::write_file(path, serialize_index(index));
}

inline SegmentIndex load_index(const std::string& path) {
  return deserialize_index(binary::read_file(path), path);
}

// --------------------------------------------------------------------------
// Search

/// Exact scan: every record scored in f64, max kept per document, top_n returned.
inline std::vector<RetrievalHit> search(const SegmentIndex& index, std::span<const double> q,
                                        std::size_t top_n) {
  if (top_n == 0) return {};
  SEDR_REQUIRE_AS(DimensionError, q.size() == index.dim, "search: query dim ", q.size(),
                  " vs index dim ", index.dim);
  std::vector<RetrievalHit> best;
  std::unordered_map<std::uint64_t, std::size_t> slot;
  const std::size_t d = index.dim;
  const float* v = index.vectors.data();
  for (std::size_t i = 0; i < index.size(); ++i, v += d) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += q[j] * static_cast<double>(v[j]);
    auto [it, fresh] = slot.try_emplace(index.doc_ids[i], best.size());
    if (fresh) {
      best.push_back({index.doc_ids[i], s, index.seg_ords[i]});
    } else {
      RetrievalHit& h = best[it->second];
      if (s > h.score || (s == h.score && index.seg_ords[i] < h.best_seg)) {
        h.score = s;
        h.best_seg = index.seg_ords[i];
      }
    }
  }
  const std::size_t n = std::min(top_n, best.size());
  std::partial_sort(best.begin(), best.begin() + static_cast<std::ptrdiff_t>(n), best.end(),
                    hit_before);
  best.resize(n);
  return best;
}

inline std::vector<RetrievalHit> search(const SegmentIndex& index, const Tensor& q,
                                        std::size_t top_n) {
  return search(index, q.data(), top_n);
}

inline std::vector<std::vector<RetrievalHit>> batch_search(
    const SegmentIndex& index, const std::vector<std::vector<double>>& queries, std::size_t top_n,
    std::size_t threads = 1) {
  std::vector<std::vector<RetrievalHit>> out(queries.size());
  parallel_for(queries.size(), threads,
               [&](std::size_t i) { out[i] = search(index, queries[i], top_n); });
  return out;
}

/// Query vectors through the query encoder, in input order.
inline std::vector<std::vector<double>> encode_queries(const ModelParameters& query_params,
                                                       const EncoderConfig& cfg,
                                                       const std::vector<QueryRecord>& queries,
                                                       std::size_t threads = 1) {
  std::vector<std::vector<double>> out(queries.size());
  parallel_for(queries.size(), threads, [&](std::size_t i) {
    NoGradScope no_grad;
    const Tensor v = encode_query(queries[i], query_params, cfg);
    out[i].assign(v.data().begin(), v.data().end());
  });
  return out;
}

inline std::string format_score(double v) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

/// TREC run lines `qid Q0 docid rank score tag`, ranks from 1.
inline void write_trec_run(std::ostream& out, std::uint64_t qid,
                           const std::vector<RetrievalHit>& hits, const std::string& tag) {
  for (std::size_t r = 0; r < hits.size(); ++r)
    out << qid << " Q0 " << hits[r].doc_id << ' ' << (r + 1) << ' ' << format_score(hits[r].score)
        << ' ' << tag << '\n';
}

}  // namespace sedr
