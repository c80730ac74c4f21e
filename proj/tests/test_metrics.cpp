#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "sedr/metrics.hpp"

namespace sedr {
namespace {

Run run_of(const std::string& qid, std::vector<std::string> docs) {
  sedr::Run r;
  for (std::size_t i = 0; i < docs.size(); ++i)
    r[qid].push_back({docs[i], static_cast<int>(i + 1), static_cast<double>(docs.size() - i)});
  return r;
}

Qrels parse_qrels_text(const std::string& s) {
  std::istringstream in(s);
  return parse_qrels(in);
}

Run parse_run_text(const std::string& s) {
  std::istringstream in(s);
  return parse_run(in);
}

TEST(Metrics, RelevantAtRankThreeGivesReciprocalRank) {
  const Qrels q{{"1", {{"c", 1}}}};
  const Metrics m = compute_metrics(run_of("1", {"a", "b", "c"}), q);
  EXPECT_NEAR(m.mrr_at_100, 1.0 / 3.0, 1e-9);
  EXPECT_EQ(m.num_queries, 1u);
}

TEST(Metrics, GradedRelevantAtRankTwo) {
  const Qrels q{{"1", {{"b", 2}}}};
  const Metrics m = compute_metrics(run_of("1", {"a", "b"}), q);
  EXPECT_NEAR(m.ndcg_at_10, 0.6309297535714575, 1e-9);
  EXPECT_NEAR(m.ndcg_at_10, (3.0 / std::log2(3.0)) / 3.0, 1e-15);
}

TEST(Metrics, HalfOfRelevantInTopHundred) {
  const Qrels q{{"1", {{"r1", 1}, {"r2", 1}, {"r3", 1}, {"r4", 1}}}};
  std::vector<std::string> docs{"r1"};
  for (int i = 0; i < 98; ++i) docs.push_back("x" + std::to_string(i));
  docs.push_back("r2");  // rank 100
  docs.push_back("r3");  // rank 101
  const Metrics m = compute_metrics(run_of("1", docs), q);
  EXPECT_NEAR(m.recall_at_100, 0.5, 1e-9);
  EXPECT_NEAR(m.recall_at_10, 0.25, 1e-9);
}

TEST(Metrics, PerfectRunScoresOne) {
  const Qrels q{{"1", {{"a", 3}, {"b", 1}}}, {"2", {{"z", 1}}}};
  sedr::Run r = run_of("1", {"a", "b", "x"});
  r["2"] = run_of("2", {"z"})["2"];
  const Metrics m = compute_metrics(r, q);
  EXPECT_DOUBLE_EQ(m.mrr_at_100, 1.0);
  EXPECT_DOUBLE_EQ(m.ndcg_at_10, 1.0);
  EXPECT_DOUBLE_EQ(m.recall_at_10, 1.0);
  EXPECT_DOUBLE_EQ(m.recall_at_100, 1.0);
}

TEST(Metrics, MissingRunQueryScoresZeroAndUnjudgedQueryIsExcluded) {
  std::vector<std::string> warnings;
  log::ScopedSink sink([&](const std::string& w) { warnings.push_back(w); });
  const Qrels q{{"1", {{"a", 1}}}, {"2", {{"b", 1}}}, {"3", {{"c", 0}}}};
  sedr::Run r = run_of("1", {"a"});
  r["9"] = run_of("9", {"a"})["9"];
  const Metrics m = compute_metrics(r, q);
  EXPECT_EQ(m.num_queries, 2u);
  EXPECT_DOUBLE_EQ(m.mrr_at_100, 0.5);
  EXPECT_EQ(warnings.size(), 2u);  // run query 9, relevance-free query 3
}

TEST(Metrics, RelevanceBeyondCutoffsCountsNothing) {
  const Qrels q{{"1", {{"r", 1}}}};
  std::vector<std::string> docs;
  for (int i = 0; i < 100; ++i) docs.push_back("x" + std::to_string(i));
  docs.push_back("r");
  const Metrics m = compute_metrics(run_of("1", docs), q);
  EXPECT_EQ(m.mrr_at_100, 0.0);
  EXPECT_EQ(m.recall_at_100, 0.0);
  EXPECT_EQ(m.ndcg_at_10, 0.0);
}

TEST(Metrics, ValuesStayInUnitIntervalAndReversalNeverHelps) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    Qrels q;
    std::vector<std::string> docs;
    for (int d = 0; d < 30; ++d) {
      docs.push_back("d" + std::to_string(d));
      if (rng() % 5 == 0) q["1"][docs.back()] = static_cast<int>(rng() % 3);
    }
    q["1"]["d0"] = std::max(q["1"]["d0"], 1);
    std::shuffle(docs.begin(), docs.end(), rng);
    // Sort descending by grade so the forward run is ideal-ordered.
    std::stable_sort(docs.begin(), docs.end(), [&](auto& a, auto& b) {
      auto ga = q["1"].count(a) ? q["1"][a] : 0, gb = q["1"].count(b) ? q["1"][b] : 0;
      return ga > gb;
    });
    const Metrics fwd = compute_metrics(run_of("1", docs), q);
    std::reverse(docs.begin(), docs.end());
    const Metrics rev = compute_metrics(run_of("1", docs), q);
    for (double v : {fwd.mrr_at_100, fwd.ndcg_at_10, fwd.recall_at_10, fwd.recall_at_100}) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0 + 1e-12);
    }
    EXPECT_NEAR(fwd.ndcg_at_10, 1.0, 1e-12);
    EXPECT_LE(rev.mrr_at_100, fwd.mrr_at_100);
    EXPECT_LE(rev.ndcg_at_10, fwd.ndcg_at_10);
  }
}

TEST(ParseQrels, ReadsStringIds) {
  const Qrels q = parse_qrels_text("7 0 D12 1\n");
  ASSERT_EQ(q.count("7"), 1u);
  EXPECT_EQ(q.at("7").at("D12"), 1);
}

TEST(ParseQrels, EmptyInputIsEmpty) { EXPECT_TRUE(parse_qrels_text("").empty()); }

TEST(ParseQrels, DuplicateKeepsLastWithWarning) {
  std::vector<std::string> warnings;
  log::ScopedSink sink([&](const std::string& w) { warnings.push_back(w); });
  const Qrels q = parse_qrels_text("1 0 a 1\n1 0 a 3\n");
  EXPECT_EQ(q.at("1").at("a"), 3);
  ASSERT_EQ(warnings.size(), 1u);
  EXPECT_NE(warnings[0].find(":2:"), std::string::npos);
}

TEST(ParseQrels, MalformedLineNamesLineNumber) {
  try {
    parse_qrels_text("1 0 a 1\n\n1 0 b\n");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("qrels:3:"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_qrels_text("1 0 a x\n"), FormatError);
}

TEST(ParseRun, ScoreGovernsOverRank) {
  const sedr::Run r = parse_run_text("1 Q0 a 1 0.1 t\n1 Q0 b 2 0.9 t\n1 Q0 c 3 0.5 t\n");
  const auto& e = r.at("1");
  ASSERT_EQ(e.size(), 3u);
  EXPECT_EQ(e[0].doc_id, "b");
  EXPECT_EQ(e[1].doc_id, "c");
  EXPECT_EQ(e[2].doc_id, "a");
}

TEST(ParseRun, EmptyAndMalformed) {
  EXPECT_TRUE(parse_run_text("").empty());
  EXPECT_THROW(parse_run_text("1 Q0 a 1 0.1\n"), FormatError);
  EXPECT_THROW(parse_run_text("1 Q0 a one 0.1 t\n"), FormatError);
  EXPECT_THROW(parse_run_text("1 Q0 a 1 nan t\n"), FormatError);
}

TEST(ParseRun, WrittenQrelsRoundTrip) {
  const Qrels q{{"1", {{"a", 1}, {"b", 2}}}, {"x", {{"D3", 0}}}};
  std::ostringstream os;
  write_qrels(os, q);
  EXPECT_EQ(parse_qrels_text(os.str()), q);
}

// ---------------------------------------------------------------- strata

struct Fixture {
  Run run;
  Qrels qrels;
  QueryMetaTable meta;
};

Fixture random_fixture(std::uint64_t seed, std::size_t nq) {
  std::mt19937_64 rng(seed);
  Fixture f;
  for (std::size_t q = 0; q < nq; ++q) {
    const std::string qid = std::to_string(q);
    std::vector<std::string> docs;
    for (int d = 0; d < 40; ++d) docs.push_back("d" + std::to_string(d));
    std::shuffle(docs.begin(), docs.end(), rng);
    f.qrels[qid][docs[rng() % 40]] = 1 + static_cast<int>(rng() % 2);
    f.qrels[qid][docs[rng() % 40]] = 1;
    if (q % 7 != 3) f.run[qid] = run_of(qid, docs)[qid];  // some queries missing from the run
    f.meta[qid] = {q, 50 + rng() % 100, static_cast<std::size_t>(rng() % 4)};
  }
  return f;
}

TEST(Stratified, SingleAllStratumEqualsGlobal) {
  const Fixture f = random_fixture(1, 50);
  const auto rows = stratified_report(f.run, f.qrels, f.meta, {{"all", [](const QueryMeta&) { return true; }}});
  const Metrics g = compute_metrics(f.run, f.qrels);
  ASSERT_TRUE(rows[0].metrics);
  EXPECT_EQ(rows[0].metrics->mrr_at_100, g.mrr_at_100);
  EXPECT_EQ(rows[0].metrics->ndcg_at_10, g.ndcg_at_10);
  EXPECT_EQ(rows[0].metrics->recall_at_100, g.recall_at_100);
}

TEST(Stratified, DisjointStrataRecomposeGlobalMean) {
  const Fixture f = random_fixture(2, 200);
  const auto rows = stratified_report(f.run, f.qrels, f.meta, ordinal_strata(4));
  const Metrics g = compute_metrics(f.run, f.qrels);
  double mrr = 0, ndcg = 0, r10 = 0, r100 = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    ASSERT_TRUE(rows[i].metrics);
    const Metrics& m = *rows[i].metrics;
    const double w = static_cast<double>(m.num_queries);
    mrr += w * m.mrr_at_100;
    ndcg += w * m.ndcg_at_10;
    r10 += w * m.recall_at_10;
    r100 += w * m.recall_at_100;
    n += m.num_queries;
  }
  ASSERT_EQ(n, g.num_queries);
  EXPECT_NEAR(mrr / n, g.mrr_at_100, 1e-12);
  EXPECT_NEAR(ndcg / n, g.ndcg_at_10, 1e-12);
  EXPECT_NEAR(r10 / n, g.recall_at_10, 1e-12);
  EXPECT_NEAR(r100 / n, g.recall_at_100, 1e-12);
}

TEST(Stratified, LengthStrataPartitionQueries) {
  const Fixture f = random_fixture(3, 120);
  const auto rows = stratified_report(f.run, f.qrels, f.meta, length_strata({0, 80, 120}));
  std::size_t n = 0;
  for (const auto& r : rows) n += r.metrics ? r.metrics->num_queries : 0;
  EXPECT_EQ(n, 120u);
  EXPECT_EQ(rows[2].name, "length[120,inf)");
}

TEST(Stratified, EmptyStratumIsNotAvailable) {
  const Fixture f = random_fixture(4, 10);
  const auto rows = stratified_report(f.run, f.qrels, f.meta, {{"none", [](const QueryMeta&) { return false; }}});
  EXPECT_FALSE(rows[0].metrics);
  std::ostringstream os;
  write_metrics_table(os, rows);
  EXPECT_NE(os.str().find("n/a"), std::string::npos);
}

TEST(Stratified, MissingMetadataIsContractError) {
  Fixture f = random_fixture(5, 5);
  f.meta.erase("2");
  EXPECT_THROW(stratified_report(f.run, f.qrels, f.meta, ordinal_strata(2)), ContractError);
}

TEST(Report, MachineReadableLine) {
  Metrics m{0.5, 0.25, 0.125, 1.0, 3};
  EXPECT_EQ(metrics_line(m),
            "mrr@100=0.500000 ndcg@10=0.250000 recall@10=0.125000 recall@100=1.000000 queries=3");
}

TEST(QueryMeta, ParsesTabSeparatedLines) {
  std::istringstream in("1\t42\t100\t3\n\n2\t7\t18\t0\n");
  const auto t = read_query_meta(in, "meta");
  EXPECT_EQ(t.at("1").positive_doc, 42u);
  EXPECT_EQ(t.at("1").doc_length, 100u);
  EXPECT_EQ(t.at("2").relevant_ordinal, 0u);
  std::istringstream bad("1\t2\t3\n");
  EXPECT_THROW(read_query_meta(bad, "meta"), FormatError);
}

}  // namespace
}  // namespace sedr
