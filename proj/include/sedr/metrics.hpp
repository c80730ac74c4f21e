#pragma once

// TREC qrels/run IO, MRR@100, NDCG@10, Recall@10/100, and stratified reports.

#include <algorithm>
#include <cmath>
#include <functional>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "sedr/corpus_io.hpp"
#include "sedr/error.hpp"
#include "sedr/log.hpp"

namespace sedr {

/// qid -> docid -> graded relevance.
using Qrels = std::map<std::string, std::map<std::string, int>>;

struct RunEntry {
  std::string doc_id;
  int rank = 0;
  double score = 0.0;
};

/// qid -> entries, best first.
using Run = std::map<std::string, std::vector<RunEntry>>;

inline Qrels parse_qrels(std::istream& in, const std::string& source = "qrels") {
  Qrels q;
  std::string line;
  for (std::size_t no = 1; std::getline(in, line); ++no) {
    const auto f = text::fields(text::strip_cr(line));
    if (f.empty()) continue;
    if (f.size() != 4) text::line_error(source, no, "expected `qid 0 docid rel`");
    int rel;
    if (!text::parse_number(f[3], rel)) text::line_error(source, no, "bad relevance");
    auto [it, fresh] = q[std::string(f[0])].insert_or_assign(std::string(f[2]), rel);
    if (!fresh)
      log::warn(detail::concat(source, ":", no, ": duplicate judgment for (", f[0], ", ", f[2],
                               "), keeping the last"));
  }
  return q;
}

inline Qrels parse_qrels(const std::string& path) {
  auto in = text::open_input(path);
  return parse_qrels(in, path);
}

/// Six-column run lines; each query's entries are re-sorted by score
/// descending (ties by rank, then doc id), so scores govern over ranks.
inline Run parse_run(std::istream& in, const std::string& source = "run") {
  Run run;
  std::string line;
  for (std::size_t no = 1; std::getline(in, line); ++no) {
    const auto f = text::fields(text::strip_cr(line));
    if (f.empty()) continue;
    if (f.size() != 6) text::line_error(source, no, "expected `qid Q0 docid rank score tag`");
    RunEntry e;
    e.doc_id = std::string(f[2]);
    if (!text::parse_number(f[3], e.rank)) text::line_error(source, no, "bad rank");
    if (!text::parse_number(f[4], e.score) || !std::isfinite(e.score))
      text::line_error(source, no, "bad score");
    run[std::string(f[0])].push_back(std::move(e));
  }
  for (auto& [qid, entries] : run)
    std::stable_sort(entries.begin(), entries.end(), [](const RunEntry& a, const RunEntry& b) {
      if (a.score != b.score) return a.score > b.score;
      if (a.rank != b.rank) return a.rank < b.rank;
      return a.doc_id < b.doc_id;
    });
  return run;
}

inline Run parse_run(const std::string& path) {
  auto in = text::open_input(path);
  return parse_run(in, path);
}

inline void write_qrels(std::ostream& out, const Qrels& q) {
  for (const auto& [qid, docs] : q)
    for (const auto& [doc, rel] : docs) out << qid << " 0 " << doc << ' ' << rel << '\n';
}

struct Metrics {
  double mrr_at_100 = 0.0;
  double ndcg_at_10 = 0.0;
  double recall_at_10 = 0.0;
  double recall_at_100 = 0.0;
  std::size_t num_queries = 0;
};

struct QueryMetrics {
  double rr = 0.0, ndcg = 0.0, recall10 = 0.0, recall100 = 0.0;
};

/// Per-query values for one ranked list against one query's judgments.
inline QueryMetrics query_metrics(const std::vector<RunEntry>& ranked,
                                  const std::map<std::string, int>& judged) {
  QueryMetrics m;
  std::vector<int> grades;
  for (const auto& [doc, rel] : judged)
    if (rel > 0) grades.push_back(rel);
  if (grades.empty()) return m;
  std::sort(grades.rbegin(), grades.rend());
  auto gain = [](int rel, std::size_t rank) {
    return (std::pow(2.0, rel) - 1.0) / std::log2(static_cast<double>(rank) + 1.0);
  };
  double ideal = 0.0;
  for (std::size_t r = 0; r < std::min<std::size_t>(10, grades.size()); ++r)
    ideal += gain(grades[r], r + 1);
  double dcg = 0.0;
  std::size_t hit10 = 0, hit100 = 0;
  for (std::size_t r = 0; r < std::min<std::size_t>(100, ranked.size()); ++r) {
    auto it = judged.find(ranked[r].doc_id);
    const int rel = it == judged.end() ? 0 : it->second;
    if (rel <= 0) continue;
    if (m.rr == 0.0) m.rr = 1.0 / static_cast<double>(r + 1);
    if (r < 10) {
      dcg += gain(rel, r + 1);
      ++hit10;
    }
    ++hit100;
  }
  m.ndcg = dcg / ideal;
  m.recall10 = static_cast<double>(hit10) / static_cast<double>(grades.size());
  m.recall100 = static_cast<double>(hit100) / static_cast<double>(grades.size());
  return m;
}

/// Evaluated set: judged queries with at least one relevant document, optionally
/// restricted by `keep`. Judged queries missing from the run score 0.
inline Metrics compute_metrics(const Run& run, const Qrels& qrels,
                               const std::function<bool(const std::string&)>& keep = {},
                               bool warn = true) {
  if (warn)
    for (const auto& [qid, entries] : run)
      if (!qrels.count(qid))
        log::warn("run query " + qid + " has no judgments; excluded");
  Metrics out;
  const std::vector<RunEntry> empty;
  for (const auto& [qid, judged] : qrels) {
    if (keep && !keep(qid)) continue;
    const bool any = std::any_of(judged.begin(), judged.end(), [](const auto& p) { return p.second > 0; });
    if (!any) {
      if (warn) log::warn("query " + qid + " has no relevant documents; excluded");
      continue;
    }
    auto it = run.find(qid);
    const QueryMetrics m = query_metrics(it == run.end() ? empty : it->second, judged);
    out.mrr_at_100 += m.rr;
    out.ndcg_at_10 += m.ndcg;
    out.recall_at_10 += m.recall10;
    out.recall_at_100 += m.recall100;
    ++out.num_queries;
  }
  if (out.num_queries > 0) {
    const double n = static_cast<double>(out.num_queries);
    out.mrr_at_100 /= n;
    out.ndcg_at_10 /= n;
    out.recall_at_10 /= n;
    out.recall_at_100 /= n;
  }
  return out;
}

// --------------------------------------------------------------------------
// Stratified reports

/// Per-query facts used to stratify: positive document length and relevant segment ordinal.
struct QueryMeta {
  std::uint64_t positive_doc = 0;
  std::size_t doc_length = 0;
  std::size_t relevant_ordinal = 0;
};

using QueryMetaTable = std::map<std::string, QueryMeta>;

struct Stratum {
  std::string name;
  std::function<bool(const QueryMeta&)> contains;
};

struct StratumResult {
  std::string name;
  std::optional<Metrics> metrics;  // nullopt when no evaluated query falls in the stratum
};

inline std::vector<StratumResult> stratified_report(const Run& run, const Qrels& qrels,
                                                    const QueryMetaTable& meta,
                                                    const std::vector<Stratum>& strata) {
  for (const auto& [qid, judged] : qrels)
    SEDR_REQUIRE(meta.count(qid), "stratified_report: no metadata for query ", qid);
  std::vector<StratumResult> out;
  for (const auto& s : strata) {
    const Metrics m = compute_metrics(
        run, qrels, [&](const std::string& qid) { return s.contains(meta.at(qid)); }, false);
    out.push_back({s.name, m.num_queries ? std::optional<Metrics>(m) : std::nullopt});
  }
  return out;
}

/// One stratum per relevant ordinal 0..k_max-1, plus "ordinal>=1".
inline std::vector<Stratum> ordinal_strata(std::size_t k_max) {
  std::vector<Stratum> s;
  for (std::size_t r = 0; r < k_max; ++r)
    s.push_back({"ordinal=" + std::to_string(r),
                 [r](const QueryMeta& m) { return m.relevant_ordinal == r; }});
  s.push_back({"ordinal>=1", [](const QueryMeta& m) { return m.relevant_ordinal >= 1; }});
  return s;
}

/// Half-open document-length ranges [bounds[i], bounds[i+1]); the last is open-ended.
inline std::vector<Stratum> length_strata(const std::vector<std::size_t>& bounds) {
  std::vector<Stratum> s;
  for (std::size_t i = 0; i < bounds.size(); ++i) {
    const std::size_t lo = bounds[i];
    const std::optional<std::size_t> hi =
        i + 1 < bounds.size() ? std::optional(bounds[i + 1]) : std::nullopt;
    const std::string name = "length[" + std::to_string(lo) + "," +
                             (hi ? std::to_string(*hi) : std::string("inf")) + ")";
    s.push_back({name, [lo, hi](const QueryMeta& m) {
                   return m.doc_length >= lo && (!hi || m.doc_length < *hi);
                 }});
  }
  return s;
}

inline QueryMetaTable read_query_meta(std::istream& in, const std::string& source) {
  QueryMetaTable t;
  std::string line;
  for (std::size_t no = 1; std::getline(in, line); ++no) {
    const std::string_view l = text::strip_cr(line);
    if (l.empty()) continue;
    const auto f = text::split(l, '\t');
    QueryMeta m;
    if (f.size() != 4 || !text::parse_number(f[1], m.positive_doc) ||
        !text::parse_number(f[2], m.doc_length) || !text::parse_number(f[3], m.relevant_ordinal))
      text::line_error(source, no, "expected `qid<TAB>posdoc<TAB>doclen<TAB>ordinal`");
    t[std::string(f[0])] = m;
  }
  return t;
}

inline QueryMetaTable read_query_meta(const std::string& path) {
  auto in = text::open_input(path);
  return read_query_meta(in, path);
}

inline std::string fixed(double v, int digits = 4) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << v;
  return os.str();
}

/// Machine-readable single line of `metric=value` pairs.
inline std::string metrics_line(const Metrics& m) {
  return "mrr@100=" + fixed(m.mrr_at_100, 6) + " ndcg@10=" + fixed(m.ndcg_at_10, 6) +
         " recall@10=" + fixed(m.recall_at_10, 6) + " recall@100=" + fixed(m.recall_at_100, 6) +
         " queries=" + std::to_string(m.num_queries);
}

inline void write_metrics_table(std::ostream& out, const std::vector<StratumResult>& rows) {
  out << "stratum              queries  MRR@100  NDCG@10  R@10     R@100\n";
  for (const auto& r : rows) {
    std::string name = r.name;
    name.resize(std::max<std::size_t>(name.size(), 20), ' ');
    out << name << ' ';
    if (!r.metrics) {
      out << "      0  n/a      n/a      n/a      n/a\n";
      continue;
    }
    const Metrics& m = *r.metrics;
    std::string n = std::to_string(m.num_queries);
    out << std::string(7 - std::min<std::size_t>(7, n.size()), ' ') << n << "  "
        << fixed(m.mrr_at_100) << "   " << fixed(m.ndcg_at_10) << "   " << fixed(m.recall_at_10)
        << "   " << fixed(m.recall_at_100) << '\n';
  }
}

}  // namespace sedr
