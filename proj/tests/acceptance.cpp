// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.
//
//   acceptance [--work-dir DIR] [--only 1,4,9] [--threads N]
//
// Criteria 9-11 share one desk-scale experiment whose checkpoints, runs and a
// results.json land in the work directory.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sedr/checkpoint.hpp"
#include "sedr/diagnostics.hpp"
#include "sedr/index.hpp"
#include "sedr/metrics.hpp"
#include "sedr/pipeline.hpp"
#include "sedr/synthetic.hpp"

namespace {

using namespace sedr;
using json = nlohmann::ordered_json;
using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

void progress(const std::string& msg) { std::cerr << "[acceptance] " << msg << std::endl; }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string num(double v, int digits = 4) { return fixed(v, digits); }

std::string sci(double v) {
  std::ostringstream o;
  o << std::scientific << std::setprecision(2) << v;
  return o.str();
}

std::vector<std::uint32_t> random_tokens(std::size_t n, std::size_t vocab, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::uint32_t> tok(kSepId + 1, static_cast<std::uint32_t>(vocab - 1));
  std::vector<std::uint32_t> v(n);
  for (auto& t : v) t = tok(rng);
  return v;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

// ---------------------------------------------------------------------------
// 1-8: properties on the tiny profile

Outcome gradient_fidelity() {
  EncoderConfig cfg = tiny_profile();
  cfg.pattern = InteractionPattern::segment_interaction;
  BatchGradCheckSetup s;
  s.segments = 3;
  s.num_coords = 200;
  s.seed = 11;
  const auto t0 = Clock::now();
  const GradCheckResult r = batch_loss_gradcheck(cfg, s);
  const double secs = since(t0);
  const std::size_t groups = BiEncoder::init(cfg, 0).parameters().size();
  const bool ok = r.max_relative_error < 1e-4 && r.coords_checked >= 200 && r.groups_covered == groups &&
                  secs < 60.0;
  std::ostringstream d;
  d << "max_rel_err=" << r.max_relative_error << " coords=" << r.coords_checked << " groups=" << r.groups_covered
    << "/" << groups << " seconds=" << num(secs, 1);
  return {ok, d.str()};
}

Outcome single_segment_degeneracy() {
  std::mt19937_64 rng(21);
  EncoderConfig seg = tiny_profile(), std_cfg = tiny_profile();
  seg.pattern = InteractionPattern::segment_interaction;
  std_cfg.pattern = InteractionPattern::maxp;
  const BiEncoder model = BiEncoder::init(seg, 5);
  NoGradScope no_grad;
  std::size_t same = 0;
  const std::size_t trials = 20;
  for (std::size_t i = 0; i < trials; ++i) {
    const auto toks = random_tokens(1 + rng() % seg.segment_body_len, seg.vocab_size, rng);
    same += bitwise_equal(encode_document(toks, model.doc, seg), encode_document(toks, model.doc, std_cfg));
  }
  return {same == trials, std::to_string(same) + "/" + std::to_string(trials) + " documents bitwise identical"};
}

Outcome document_awareness() {
  std::mt19937_64 rng(31);
  const EncoderConfig base = tiny_profile();
  const std::size_t m = base.segment_body_len;
  std::map<InteractionPattern, std::size_t> changed;
  const InteractionPattern patterns[] = {InteractionPattern::maxp, InteractionPattern::segment_interaction,
                                         InteractionPattern::transformer_head,
                                         InteractionPattern::global_attention};
  std::map<InteractionPattern, BiEncoder> models;
  for (auto p : patterns) {
    EncoderConfig c = base;
    c.pattern = p;
    models.emplace(p, BiEncoder::init(c, 9));
  }
  NoGradScope no_grad;
  const std::size_t trials = 20;
  for (std::size_t i = 0; i < trials; ++i) {
    const auto toks = random_tokens(2 * m + 1 + rng() % m, base.vocab_size, rng);
    auto perturbed = toks;
    const std::size_t at = m + rng() % m;  // a body token of the second segment
    perturbed[at] = perturbed[at] == kSepId + 1 ? kSepId + 2 : kSepId + 1;
    for (auto p : patterns) {
      const BiEncoder& model = models.at(p);
      const Tensor a = encode_document(toks, model.doc, model.config);
      const Tensor b = encode_document(perturbed, model.doc, model.config);
      bool diff = false;
      for (std::size_t j = 0; j < a.cols(); ++j) diff |= a.at(0, j) != b.at(0, j);
      changed[p] += diff;
    }
  }
  const bool ok = changed[InteractionPattern::maxp] == 0 &&
                  changed[InteractionPattern::segment_interaction] == trials &&
                  changed[InteractionPattern::transformer_head] == trials &&
                  changed[InteractionPattern::global_attention] == trials;
  std::ostringstream d;
  d << "first-segment vector changed in maxp " << changed[InteractionPattern::maxp] << ", segint "
    << changed[InteractionPattern::segment_interaction] << ", head "
    << changed[InteractionPattern::transformer_head] << ", global "
    << changed[InteractionPattern::global_attention] << " of " << trials;
  return {ok, d.str()};
}

Outcome closed_form_losses() {
  double worst = 0.0;
  for (std::size_t n : {1, 3, 10}) {
    std::vector<Tensor> s(n + 1, Tensor::scalar(0.7));
    worst = std::max(worst, std::abs(info_nce_scores(s).item() - std::log(static_cast<double>(n + 1))));
  }
  for (double delta : {-1.0, 0.0, 1.0}) {
    std::vector<Tensor> s{Tensor::scalar(0.25), Tensor::scalar(0.25 + delta)};
    worst = std::max(worst, std::abs(info_nce_scores(s).item() - std::log1p(std::exp(delta))));
  }
  return {worst < 1e-9, "max abs deviation " + sci(worst)};
}

Outcome negative_accounting() {
  std::mt19937_64 rng(41);
  auto vecs = [&](std::size_t rows) {
    Tensor t = Tensor::zeros({rows, 4});
    std::normal_distribution<double> n;
    for (double& v : t.mutable_data()) v = n(rng);
    return t;
  };
  bool counts_ok = true;
  std::ostringstream d;
  for (auto [B, C] : {std::pair<std::size_t, std::size_t>{1, 0}, {2, 3}, {17, 50}}) {
    std::vector<EncodedInstance> batch;
    for (std::size_t i = 0; i < B; ++i) batch.push_back({vecs(1), vecs(2), vecs(3)});
    LateCacheQueue cache(C);
    for (std::size_t i = 0; i < C; ++i) cache.push(vecs(1), vecs(1), vecs(2), i);
    for (std::size_t i = 0; i < B; ++i)
      counts_ok &= assemble_negatives(i, batch, cache).size() == 1 + 2 * (B - 1) + 2 * C;
    d << "(B=" << B << ",C=" << C << ") ";
  }

  // Detachment: the first cached entry must not move while the model trains.
  EncoderConfig cfg = tiny_profile();
  BiEncoder model = BiEncoder::init(cfg, 3);
  std::vector<std::vector<std::uint32_t>> q, pos, neg;
  for (int i = 0; i < 101; ++i) {
    q.push_back(random_tokens(4, cfg.vocab_size, rng));
    pos.push_back(random_tokens(20 + rng() % 40, cfg.vocab_size, rng));
    neg.push_back(random_tokens(20 + rng() % 40, cfg.vocab_size, rng));
  }
  LateCacheQueue cache(200);
  AdamState state;
  AdamOptions opt;
  auto step = [&](int i) {
    const TrainingExample ex{q[i], pos[i], neg[i]};
    train_step(model, std::span(&ex, 1), cache, state, opt);
  };
  step(0);
  const CacheEntry snap{cache[0].query.detach(), cache[0].positive.detach(), cache[0].negative.detach(),
                        cache[0].step_created};
  bool frozen = true;
  for (int i = 1; i <= 100; ++i) {
    step(i);
    const CacheEntry& e = cache[0];
    frozen &= bitwise_equal(e.query, snap.query) && bitwise_equal(e.positive, snap.positive) &&
              bitwise_equal(e.negative, snap.negative) && !e.query.requires_grad();
  }
  d << (counts_ok ? "counts exact" : "count mismatch") << ", cache entry "
    << (frozen ? "bit-identical" : "changed") << " over 100 steps";
  return {counts_ok && frozen, d.str()};
}

Outcome retrieval_oracle() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(61);
  const EncoderConfig cfg = tiny_profile();
  const BiEncoder model = BiEncoder::init(cfg, 13);
  std::vector<DocumentRecord> docs;
  for (std::size_t i = 0; i < 100; ++i)
    docs.push_back({1000 + i, random_tokens(1 + rng() % cfg.max_doc_tokens(), cfg.vocab_size, rng)});
  std::vector<QueryRecord> queries;
  for (std::size_t i = 0; i < 50; ++i) queries.push_back({i + 1, random_tokens(1 + rng() % 8, cfg.vocab_size, rng)});
  const SegmentIndex idx = build_index(model.doc, cfg, docs);
  const auto qv = encode_queries(model.query, cfg, queries);

  // Oracle: each document encoded on its own, rounded to f32, scored in a plain loop.
  std::vector<std::vector<std::vector<float>>> segs;
  {
    NoGradScope no_grad;
    for (const auto& d : docs) {
      const Tensor e = encode_document(d, model.doc, cfg);
      auto& rows = segs.emplace_back();
      for (std::size_t s = 0; s < e.rows(); ++s) {
        auto& row = rows.emplace_back();
        for (std::size_t j = 0; j < e.cols(); ++j) row.push_back(static_cast<float>(e.at(s, j)));
      }
    }
  }
  std::size_t agree = 0;
  for (std::size_t qi = 0; qi < queries.size(); ++qi) {
    std::vector<RetrievalHit> expect;
    for (std::size_t i = 0; i < docs.size(); ++i) {
      RetrievalHit best{docs[i].id, -std::numeric_limits<double>::infinity(), 0};
      for (std::size_t s = 0; s < segs[i].size(); ++s) {
        double dot = 0.0;
        for (std::size_t j = 0; j < cfg.hidden_dim; ++j) dot += qv[qi][j] * static_cast<double>(segs[i][s][j]);
        if (dot > best.score) best = {docs[i].id, dot, static_cast<std::uint16_t>(s)};
      }
      expect.push_back(best);
    }
    std::stable_sort(expect.begin(), expect.end(), [](const RetrievalHit& a, const RetrievalHit& b) {
      return a.score != b.score ? a.score > b.score : a.doc_id < b.doc_id;
    });
    agree += search(idx, qv[qi], docs.size()) == expect;
  }
  const double secs = since(t0);
  return {agree == queries.size() && secs < 10.0,
          std::to_string(agree) + "/50 queries exact, seconds=" + num(secs, 2)};
}

Outcome index_round_trip() {
  std::mt19937_64 rng(71);
  const EncoderConfig cfg = tiny_profile();
  const BiEncoder model = BiEncoder::init(cfg, 17);
  std::vector<DocumentRecord> docs;
  for (std::size_t i = 0; i < 30; ++i)
    docs.push_back({i + 1, random_tokens(1 + rng() % cfg.max_doc_tokens(), cfg.vocab_size, rng)});
  const std::string a = serialize_index(build_index(model.doc, cfg, docs));
  const std::string b = serialize_index(deserialize_index(a));
  std::size_t rejected = 0, cases = 0;
  auto corrupt = [&](std::string bytes) {
    ++cases;
    try {
      deserialize_index(std::move(bytes));
    } catch (const FormatError&) {
      ++rejected;
    }
  };
  std::string magic = a;
  magic[0] = 'X';
  corrupt(magic);
  corrupt(a.substr(0, a.size() - 3));
  corrupt(a + "x");
  std::string version = a;
  version[8] = 9;
  corrupt(version);
  return {a == b && rejected == cases,
          std::string(a == b ? "byte-identical" : "bytes differ") + ", " + std::to_string(rejected) + "/" +
              std::to_string(cases) + " corruptions rejected"};
}

Outcome metric_correctness() {
  auto entries = [](std::initializer_list<const char*> ids) {
    std::vector<RunEntry> v;
    int r = 0;
    for (const char* id : ids) v.push_back({id, ++r, 1.0 / r});
    return v;
  };
  double worst = 0.0;
  const Run r1{{"q", entries({"a", "b", "rel"})}};
  worst = std::max(worst, std::abs(compute_metrics(r1, {{"q", {{"rel", 1}}}}).mrr_at_100 - 1.0 / 3.0));
  const Run r2{{"q", entries({"a", "rel"})}};
  const double ndcg_expect = (3.0 / std::log2(3.0)) / 3.0;
  worst = std::max(worst, std::abs(compute_metrics(r2, {{"q", {{"rel", 2}}}}).ndcg_at_10 - ndcg_expect));
  const Run r3{{"q", entries({"r1", "x", "r2"})}};
  worst = std::max(worst, std::abs(compute_metrics(r3, {{"q", {{"r1", 1}, {"r2", 1}, {"r3", 1}, {"r4", 1}}}})
                                       .recall_at_100 - 0.5));
  const Qrels qrels{{"1", {{"a", 1}, {"b", 2}}}, {"2", {{"c", 1}}}};
  const Run perfect{{"1", entries({"b", "a"})}, {"2", entries({"c"})}};
  const Metrics p = compute_metrics(perfect, qrels);
  const bool perfect_ok = p.mrr_at_100 == 1.0 && std::abs(p.ndcg_at_10 - 1.0) < 1e-12 &&
                          p.recall_at_10 == 1.0 && p.recall_at_100 == 1.0;
  return {worst < 1e-9 && perfect_ok,
          "max deviation " + sci(worst) + (perfect_ok ? ", perfect run 1.0" : ", perfect run wrong")};
}

// ---------------------------------------------------------------------------
// 9-11: desk-scale experiment

struct Recipe {
  PretrainConfig pretrain;
  TrainConfig train;
  std::size_t warmup_epochs = 1;
  std::uint64_t init_seed = 1;

  Recipe() {
    pretrain.steps = 1000;
    pretrain.batch_size = 8;
    pretrain.query_len = 5;
    pretrain.learning_rate = 3e-4;
    pretrain.seed = 2;
    train.batch_size = 8;
    train.cache_size = 16;
    train.hardness = 20;
    train.learning_rate = 3e-4;
    train.epochs = 1;
  }
};

struct Evaluation {
  Metrics all;
  Metrics beyond_first;  // relevant ordinal >= 1
  double seconds = 0.0;
};

class Experiment {
 public:
  Experiment(std::filesystem::path dir, std::size_t threads) : dir_(std::move(dir)), threads_(threads) {
    std::filesystem::create_directories(dir_);
  }

  const SyntheticCorpus& corpus() {
    if (!corpus_) {
      SyntheticCorpusConfig sc;  // 2000 docs, 1-4 segments uniform, 400/100 queries, ordinal uniform
      sc.seed = 7;
      corpus_ = generate_corpus(sc);
      train_qs_ = corpus_->train_queries();
      test_qs_ = corpus_->test_queries();
      test_qrels_ = corpus_->qrels_for(test_qs_);
      std::filesystem::create_directories(dir_ / "data");
      write_synthetic_corpus(*corpus_, (dir_ / "data").string());
    }
    return *corpus_;
  }

  EncoderConfig config(std::size_t max_segments) const {
    EncoderConfig c = desk_profile();
    c.tie_encoders = true;
    c.max_segments = max_segments;
    return c;
  }

  /// Warm-up checkpoint shared by every full-length pattern, or the truncated one.
  const BiEncoder& base(bool truncated) {
    auto& slot = truncated ? trunc_base_ : full_base_;
    if (!slot) {
      corpus();
      const auto t0 = Clock::now();
      BiEncoder m = BiEncoder::init(config(truncated ? 1 : 4), recipe.init_seed);
      const PretrainResult r = pretrain_segments(m, corpus_->docs, recipe.pretrain);
      progress(std::string(truncated ? "truncated" : "full") + " warm-up: " + std::to_string(r.losses.size()) +
               " steps in " + num(since(t0), 1) + " s, final loss " + num(r.losses.back(), 3));
      slot = std::move(m);
    }
    return *slot;
  }

  struct Trained {
    BiEncoder model;
    Evaluation eval;
  };

  Trained run(const std::string& name, bool truncated, InteractionPattern pattern, const TrainConfig& tc,
              std::uint64_t seed) {
    const BiEncoder& start = base(truncated);
    const auto t0 = Clock::now();
    PipelineConfig pc;
    pc.warmup = tc;
    pc.warmup.epochs = recipe.warmup_epochs;
    pc.hard = tc;
    pc.hard.seed = tc.seed + 100;
    pc.negative_seed = seed;
    pc.threads = threads_;
    const TrainingData data{&corpus_->docs, &train_qs_, &corpus_->qrels};
    PipelineResult res = train_pipeline(with_pattern(start, pattern, seed), data, pc);
    Evaluation ev = evaluate(name, res.model);
    ev.seconds = since(t0);
    results_[name]["seconds"] = ev.seconds;
    save_checkpoint(res.model, (dir_ / (name + ".ckpt")).string());
    return {std::move(res.model), ev};
  }

  /// Test-set metrics of `model`, logged and recorded under `name` with its run file.
  Evaluation evaluate(const std::string& name, const BiEncoder& model) {
    corpus();
    const Run run = retrieve(model, corpus_->docs, test_qs_, 100, threads_);
    Evaluation ev;
    ev.all = compute_metrics(run, test_qrels_);
    for (const auto& row : stratified_report(run, test_qrels_, corpus_->meta, ordinal_strata(4)))
      if (row.name == "ordinal>=1" && row.metrics) ev.beyond_first = *row.metrics;
    std::ofstream out(dir_ / (name + ".run"));
    for (const auto& [qid, entries] : run)
      for (const auto& e : entries)
        out << qid << " Q0 " << e.doc_id << ' ' << e.rank << ' ' << format_score(e.score) << " sedr\n";
    progress(name + ": " + metrics_line(ev.all) + " | ordinal>=1 R@10 " + num(ev.beyond_first.recall_at_10));
    results_[name] = {{"mrr@100", ev.all.mrr_at_100},
                      {"ndcg@10", ev.all.ndcg_at_10},
                      {"recall@10", ev.all.recall_at_10},
                      {"recall@100", ev.all.recall_at_100},
                      {"recall@10_ordinal>=1", ev.beyond_first.recall_at_10}};
    return ev;
  }

  /// Segint, maxp and truncation models of the main comparison, trained once.
  const Trained& main(const std::string& which) {
    auto it = main_.find(which);
    if (it != main_.end()) return it->second;
    TrainConfig tc = recipe.train;
    tc.seed = 1;
    Trained t = which == "segint"  ? run("segint", false, InteractionPattern::segment_interaction, tc, 1)
                : which == "maxp"  ? run("maxp", false, InteractionPattern::maxp, tc, 1)
                : which == "global" ? run("global", false, InteractionPattern::global_attention, tc, 1)
                                    : run("truncation", true, InteractionPattern::segment_interaction, tc, 1);
    return main_.emplace(which, std::move(t)).first->second;
  }

  json& results() { return results_; }
  const std::vector<DocumentRecord>& docs() { return corpus().docs; }
  void save_results() { std::ofstream(dir_ / "results.json") << results_.dump(2) << '\n'; }

  Recipe recipe;

 private:
  std::filesystem::path dir_;
  std::size_t threads_;
  std::optional<SyntheticCorpus> corpus_;
  std::vector<QueryRecord> train_qs_, test_qs_;
  Qrels test_qrels_;
  std::optional<BiEncoder> full_base_, trunc_base_;
  std::map<std::string, Trained> main_;
  json results_ = json::object();
};

Outcome end_to_end(Experiment& ex) {
  const auto t0 = Clock::now();
  const auto& seg = ex.main("segint");
  const auto& maxp = ex.main("maxp").eval;
  // Fine-tuning on truncated documents mostly sees positives whose first
  // segment lacks the query's content, which can leave the baseline worse
  // than untrained. The comparison is against the strongest truncation:
  // fine-tuned, warm-up only, or the segint model indexed on segment 0.
  std::vector<std::pair<std::string, Evaluation>> baselines;
  baselines.emplace_back("truncation", ex.main("truncation").eval);
  baselines.emplace_back("truncation_warmup_only", ex.evaluate("truncation_warmup_only", ex.base(true)));
  BiEncoder first_only = seg.model;
  first_only.config.max_segments = 1;
  baselines.emplace_back("segint_indexed_first_segment", ex.evaluate("segint_indexed_first_segment", first_only));
  const auto& [trunc_name, trunc] = *std::max_element(baselines.begin(), baselines.end(), [](const auto& a, const auto& b) {
    return a.second.all.recall_at_10 < b.second.all.recall_at_10;
  });
  double best_beyond = 0.0;
  for (const auto& b : baselines) best_beyond = std::max(best_beyond, b.second.beyond_first.recall_at_10);
  const double secs = since(t0);
  const double gain = seg.eval.all.recall_at_10 - trunc.all.recall_at_10;
  const double gain_beyond = seg.eval.beyond_first.recall_at_10 - best_beyond;
  const double mrr_gap = seg.eval.all.mrr_at_100 - maxp.all.mrr_at_100;
  const bool ok = gain >= 0.15 && gain_beyond >= 0.30 && mrr_gap >= -0.02 && secs < 900.0;
  ex.results()["criterion9"] = {{"baseline", trunc_name},
                                {"recall@10_gain", gain},
                                {"recall@10_gain_ordinal>=1", gain_beyond},
                                {"mrr_segint_minus_maxp", mrr_gap},
                                {"seconds", secs}};
  std::ostringstream d;
  d << "R@10 segint " << num(seg.eval.all.recall_at_10) << " vs best truncation " << num(trunc.all.recall_at_10)
    << " (" << trunc_name << ", +" << num(gain) << "), ordinal>=1 +" << num(gain_beyond) << ", MRR segint-maxp "
    << num(mrr_gap) << ", seconds=" << num(secs, 0);
  return {ok, d.str()};
}

Outcome cache_ablation(Experiment& ex) {
  const auto t0 = Clock::now();
  double with = 0.0, without = 0.0;
  std::ostringstream per;
  for (std::uint64_t seed : {1, 2, 3}) {
    TrainConfig tc = ex.recipe.train;
    tc.batch_size = 2;
    // Four times the steps per epoch of the main recipe; at its rate the
    // cached vectors go stale fast enough that training collapses.
    tc.learning_rate = 1e-4;
    tc.seed = seed;
    tc.cache_size = 16;
    const double a = ex.run("b2_cache16_seed" + std::to_string(seed), false,
                            InteractionPattern::segment_interaction, tc, seed)
                         .eval.all.recall_at_10;
    tc.cache_size = 0;
    const double b = ex.run("b2_cache0_seed" + std::to_string(seed), false,
                            InteractionPattern::segment_interaction, tc, seed)
                         .eval.all.recall_at_10;
    with += a / 3.0;
    without += b / 3.0;
    per << " s" << seed << "=" << num(a, 2) << "/" << num(b, 2);
  }
  ex.results()["criterion10"] = {{"recall@10_cache16", with}, {"recall@10_cache0", without}, {"seconds", since(t0)}};
  return {with >= without, "mean R@10 cache16 " + num(with) + " vs cache0 " + num(without) + " (per seed" +
                               per.str() + ")"};
}

Outcome dispersion(Experiment& ex) {
  const double maxp = mean_dispersion(ex.main("maxp").model, ex.docs()).mean;
  const double seg = mean_dispersion(ex.main("segint").model, ex.docs()).mean;
  const double glob = mean_dispersion(ex.main("global").model, ex.docs()).mean;
  ex.results()["criterion11"] = {{"maxp", maxp}, {"segint", seg}, {"global", glob}};
  return {glob <= seg, "dispersion global " + num(glob) + " <= segint " + num(seg) + " (maxp " + num(maxp) + ")"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::string work_dir = "acceptance_work";
  std::vector<int> only;
  std::size_t threads = 1;
  app.add_option("--work-dir", work_dir, "Directory for experiment artifacts");
  app.add_option("--only", only, "Run only these criteria")->delimiter(',')->check(CLI::Range(1, 11));
  app.add_option("--threads", threads)->check(CLI::Range(1, 256));
  CLI11_PARSE(app, argc, argv);

  Experiment ex(work_dir, threads);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient fidelity", gradient_fidelity},
      {"single-segment degeneracy", single_segment_degeneracy},
      {"document awareness", document_awareness},
      {"closed-form losses", closed_form_losses},
      {"negative accounting", negative_accounting},
      {"retrieval oracle", retrieval_oracle},
      {"index round-trip", index_round_trip},
      {"metric correctness", metric_correctness},
      {"end-to-end directional result", [&] { return end_to_end(ex); }},
      {"late-cache ablation direction", [&] { return cache_ablation(ex); }},
      {"dispersion diagnostic", [&] { return dispersion(ex); }},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << criteria[i].first
              << "): " << o.detail << std::endl;
  }
  if (!ex.results().empty()) ex.save_results();
  return failures == 0 ? 0 : 1;
}
