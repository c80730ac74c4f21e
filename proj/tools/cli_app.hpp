#pragma once

// The `sedr` command surface. Exit codes: 0 success, 2 usage, 3 numerical,
// contract or format failure.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sedr/checkpoint.hpp"
#include "sedr/config.hpp"
#include "sedr/corpus_io.hpp"
#include "sedr/diagnostics.hpp"
#include "sedr/index.hpp"
#include "sedr/metrics.hpp"
#include "sedr/mining.hpp"
#include "sedr/pipeline.hpp"
#include "sedr/synthetic.hpp"

#ifndef SEDR_VERSION
#define SEDR_VERSION "unknown"
#endif

namespace sedr::cli {

using json = nlohmann::ordered_json;

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitFailure = 3;

/// Invalid flag combinations detected after parsing.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// `--seed` default: SEDR_SEED when set, else 0.
inline std::uint64_t default_seed() {
  if (const char* s = std::getenv("SEDR_SEED")) {
    std::uint64_t v;
    if (text::parse_number(std::string_view(s), v)) return v;
    throw UsageError(std::string("SEDR_SEED is not an unsigned integer: ") + s);
  }
  return 0;
}

inline json to_json(const EncoderConfig& c) {
  return {{"vocab_size", c.vocab_size},       {"hidden_dim", c.hidden_dim},
          {"num_heads", c.num_heads},         {"num_layers", c.num_layers},
          {"ffn_dim", c.ffn_dim},             {"segment_body_len", c.segment_body_len},
          {"max_segments", c.max_segments},   {"pattern", std::string(pattern_name(c.pattern))},
          {"tie_encoders", c.tie_encoders},   {"layer_norm_eps", c.layer_norm_eps},
          {"init_std", c.init_std}};
}

inline json to_json(const TrainConfig& t) {
  return {{"batch_size", t.batch_size},       {"cache_size", t.cache_size},
          {"hardness", t.hardness},           {"learning_rate", t.learning_rate},
          {"epochs", t.epochs},               {"seed", t.seed},
          {"cache_query_loss", t.cache_query_loss}};
}

/// Accumulates one command's manifest and writes it next to the primary output.
class Manifest {
 public:
  Manifest(std::string command, const std::vector<std::string>& argv)
      : start_(std::chrono::steady_clock::now()) {
    doc_["command"] = std::move(command);
    doc_["version"] = SEDR_VERSION;
    doc_["argv"] = argv;
  }
  json& operator[](const char* key) { return doc_[key]; }
  void input(const std::string& name, const std::string& path) { doc_["inputs"][name] = path; }
  void output(const std::string& name, const std::string& path) { doc_["outputs"][name] = path; }
  void timing(const std::string& name, double seconds) { doc_["timings"][name] = seconds; }

  void write(const std::string& path) {
    timing("total_seconds",
           std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw FormatError("cannot write manifest " + path);
    out << doc_.dump(2) << '\n';
  }

 private:
  json doc_;
  std::chrono::steady_clock::time_point start_;
};

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline std::string join_path(const std::string& dir, const char* name) {
  return (std::filesystem::path(dir) / name).string();
}

/// Options shared by every subcommand.
struct Common {
  std::string manifest;
  std::size_t threads = 1;
  std::uint64_t seed = 0;
};

inline void add_common(CLI::App* sub, Common& c, bool with_seed) {
  sub->add_option("--manifest", c.manifest, "Manifest path (default: next to the primary output)");
  sub->add_option("--threads", c.threads, "Worker threads for encoding, indexing and search")
      ->check(CLI::Range(1, 256));
  if (with_seed) sub->add_option("--seed", c.seed, "Run seed (default: $SEDR_SEED or 0)");
}

/// Encoder-shape flags; unset flags fall back to the profile.
struct EncoderFlags {
  std::string profile = "desk";
  std::string pattern = "segint";
  std::optional<std::size_t> max_segments, vocab_size;
  std::optional<double> init_std;
  bool tie_encoders = false;

  void add(CLI::App* sub) {
    sub->add_option("--profile", profile, "tiny | desk | paper")
        ->check(CLI::IsMember({"tiny", "desk", "paper"}));
    sub->add_option("--pattern", pattern, "maxp | segint | head | global")
        ->check(CLI::IsMember({"maxp", "segint", "head", "global"}));
    sub->add_option("--max-segments", max_segments, "Segments kept per document (1 = truncation)");
    sub->add_option("--vocab-size", vocab_size, "Override the profile vocabulary size");
    sub->add_option("--init-std", init_std, "Override the parameter init standard deviation");
    sub->add_flag("--tie-encoders", tie_encoders, "Share one encoder between queries and documents");
  }

  EncoderConfig build() const {
    EncoderConfig c = *profile_by_name(profile);
    c.pattern = *parse_pattern(pattern);
    if (max_segments) c.max_segments = *max_segments;
    if (vocab_size) c.vocab_size = *vocab_size;
    if (init_std) c.init_std = *init_std;
    c.tie_encoders = tie_encoders;
    c.validate();
    return c;
  }
};

struct TrainFlags {
  TrainConfig tc;
  std::size_t warmup_epochs = 0;
  bool no_cache_negative = false;

  void add(CLI::App* sub) {
    sub->add_option("--batch-size", tc.batch_size)->check(CLI::PositiveNumber);
    sub->add_option("--cache-size", tc.cache_size, "Late-cache capacity in instances");
    sub->add_option("--hardness", tc.hardness, "Top-K pool for mined hard negatives")
        ->check(CLI::PositiveNumber);
    sub->add_option("--lr", tc.learning_rate)->check(CLI::PositiveNumber);
    sub->add_option("--epochs", tc.epochs, "Epochs of the hard-negative (or --triples) phase");
    sub->add_option("--warmup-epochs", warmup_epochs, "Epochs of the random-negative phase");
    sub->add_flag("--no-cache-negative", no_cache_negative, "Disable the late cache entirely");
  }

  TrainConfig build(std::uint64_t seed) const {
    TrainConfig t = tc;
    t.seed = seed;
    if (no_cache_negative) {
      t.cache_size = 0;
      t.cache_query_loss = false;
    }
    return t;
  }
};

/// Pseudo-query segment warm-up run before supervised training.
struct PretrainFlags {
  PretrainConfig pc;

  void add(CLI::App* sub) {
    sub->add_option("--pretrain-steps", pc.steps, "Pseudo-query warm-up steps (0 = none)");
    sub->add_option("--pretrain-batch", pc.batch_size, "Pseudo-queries per warm-up step")
        ->check(CLI::PositiveNumber);
    sub->add_option("--pretrain-query-len", pc.query_len, "Tokens per pseudo-query")
        ->check(CLI::PositiveNumber);
    sub->add_option("--pretrain-lr", pc.learning_rate)->check(CLI::PositiveNumber);
  }

  PretrainConfig build(std::uint64_t seed) const {
    PretrainConfig c = pc;
    c.seed = seed;
    return c;
  }
};

inline json to_json(const PretrainConfig& p) {
  return {{"steps", p.steps}, {"batch_size", p.batch_size}, {"query_len", p.query_len},
          {"learning_rate", p.learning_rate}, {"seed", p.seed}};
}

inline std::string manifest_path(const Common& c, const std::string& primary) {
  return c.manifest.empty() ? primary + ".manifest.json" : c.manifest;
}

// --------------------------------------------------------------------------
// gen-corpus

struct GenCorpusCmd {
  Common common;
  SyntheticCorpusConfig sc;
  std::string out_dir;

  void add(CLI::App& app) {
    auto* sub = app.add_subcommand("gen-corpus", "Generate a synthetic long-document task");
    add_common(sub, common, true);
    sub->add_option("--out", out_dir, "Output directory")->required();
    sub->add_option("--docs", sc.num_docs);
    sub->add_option("--queries", sc.num_queries);
    sub->add_option("--train-queries", sc.num_train_queries);
    sub->add_option("--vocab-size", sc.vocab_size);
    sub->add_option("--segment-len", sc.segment_body_len, "Body tokens per segment");
    sub->add_option("--segment-counts", sc.segment_count_weights,
                    "Weights of 1..k segments per document")
        ->delimiter(',');
    sub->add_option("--relevant-positions", sc.relevant_position_weights,
                    "Weights of relevant segment ordinals 0..")
        ->delimiter(',');
    sub->add_option("--topic-size", sc.topic_pool_size);
    sub->add_option("--topics-per-segment", sc.topics_per_segment);
    sub->add_option("--noise-vocab", sc.noise_vocab);
    sub->add_option("--noise-rate", sc.noise_rate)->check(CLI::Range(0.0, 1.0));
    sub->add_option("--query-len", sc.query_len);
    sub->callback([this, sub] { ran = sub; });
  }

  int run(const std::vector<std::string>& argv) {
    sc.seed = common.seed;
    Manifest man("gen-corpus", argv);
    std::filesystem::create_directories(out_dir);
    const SyntheticCorpus c = generate_corpus(sc);
    for (const auto& f : write_synthetic_corpus(c, out_dir))
      man.output(std::filesystem::path(f).filename().string(), f);
    man["seed"] = sc.seed;
    man["corpus_config"] = {{"num_docs", sc.num_docs},
                            {"num_queries", sc.num_queries},
                            {"num_train_queries", sc.num_train_queries},
                            {"vocab_size", sc.vocab_size},
                            {"segment_body_len", sc.segment_body_len},
                            {"segment_count_weights", sc.segment_count_weights},
                            {"relevant_position_weights", sc.relevant_position_weights},
                            {"topic_pool_size", sc.topic_pool_size},
                            {"topics_per_segment", sc.topics_per_segment},
                            {"noise_vocab", sc.noise_vocab},
                            {"noise_rate", sc.noise_rate},
                            {"query_len", sc.query_len}};
    man.write(common.manifest.empty() ? join_path(out_dir, "manifest.json") : common.manifest);
    std::cout << "wrote " << c.docs.size() << " documents and " << c.queries.size()
              << " queries to " << out_dir << '\n';
    return kExitOk;
  }

  CLI::App* ran = nullptr;
};

// --------------------------------------------------------------------------
// train

struct TrainCmd {
  Common common;
  EncoderFlags enc;
  TrainFlags tf;
  PretrainFlags pf;
  std::string corpus, queries, triples, qrels, init, out, log_path;

  void add(CLI::App& app) {
    auto* sub = app.add_subcommand("train", "Train a bi-encoder checkpoint");
    add_common(sub, common, true);
    enc.add(sub);
    tf.add(sub);
    pf.add(sub);
    sub->add_option("--corpus", corpus)->required()->check(CLI::ExistingFile);
    sub->add_option("--queries", queries)->required()->check(CLI::ExistingFile);
    auto* t = sub->add_option("--triples", triples, "Static training triples")->check(CLI::ExistingFile);
    auto* q = sub->add_option("--qrels", qrels,
                              "Judgments: random-negative warm-up, then mined hard negatives")
                  ->check(CLI::ExistingFile);
    t->excludes(q);
    sub->add_option("--init", init, "Continue from a checkpoint (fresh optimizer state)")
        ->check(CLI::ExistingFile);
    sub->add_option("--out", out, "Checkpoint path")->required();
    sub->add_option("--log", log_path, "Step log (default: <out>.log)");
    sub->callback([this, sub] { ran = sub; });
  }

  int run(const std::vector<std::string>& argv) {
    if (triples.empty() && qrels.empty()) throw UsageError("train needs --triples or --qrels");
    if (!triples.empty() && tf.warmup_epochs > 0)
      throw UsageError("--warmup-epochs needs --qrels (random negatives)");
    Manifest man("train", argv);
    const TrainConfig tc = tf.build(common.seed);
    BiEncoder model;
    if (!init.empty()) {
      if (ran->count("--profile") || ran->count("--max-segments") || ran->count("--vocab-size") ||
          ran->count("--init-std") || ran->count("--tie-encoders"))
        throw UsageError("encoder shape flags cannot be combined with --init");
      model = load_checkpoint(init);
      if (ran->count("--pattern")) {
        const auto p = *parse_pattern(enc.pattern);
        const bool head = p == InteractionPattern::transformer_head;
        if (head != (model.config.pattern == InteractionPattern::transformer_head))
          throw UsageError("--pattern cannot add or remove the head layer of an --init checkpoint");
        model.config.pattern = p;
      }
      man.input("init", init);
    } else {
      model = BiEncoder::init(enc.build(), common.seed);
    }
    const EncoderConfig& cfg = model.config;

    const auto docs = read_records(corpus);
    const auto qs = read_records(queries);
    validate_records(docs, cfg.vocab_size, corpus);
    validate_records(qs, cfg.vocab_size, queries);
    man.input("corpus", corpus);
    man.input("queries", queries);

    const std::string log_file = log_path.empty() ? out + ".log" : log_path;
    auto log_out = text::open_output(log_file);
    std::size_t step = 0;
    auto on_step = [&](std::size_t, const StepResult& r) { write_log_line(log_out, ++step, r.loss, r.cache_fill); };
    const RecordIndex qi(qs), di(docs);
    std::vector<double> epoch_seconds;
    auto phase = [&](const std::vector<TrainingInstance>& ts, const TrainConfig& c) {
      if (c.epochs == 0 || ts.empty()) return;
      const TrainResult r = train(model, resolve_triples(ts, qi, di), c, on_step);
      epoch_seconds.insert(epoch_seconds.end(), r.epoch_seconds.begin(), r.epoch_seconds.end());
    };
    const auto t0 = std::chrono::steady_clock::now();
    const PretrainConfig pre = pf.build(common.seed);
    const PretrainResult pr = pretrain_segments(model, docs, pre);
    if (pre.steps > 0) man.timing("pretrain_seconds", pr.seconds);
    if (!triples.empty()) {
      man.input("triples", triples);
      phase(read_triples(triples), tc);
    } else {
      man.input("qrels", qrels);
      const Qrels judged = parse_qrels(qrels);
      TrainConfig warm = tc;
      warm.epochs = tf.warmup_epochs;
      phase(random_negatives(qs, docs, judged, common.seed), warm);
      if (tc.epochs > 0) {
        const SegmentIndex idx = build_index(model.doc, cfg, docs, common.threads);
        phase(mine_hard_negatives(model, idx, qs, judged, tc.hardness, common.seed + 1, common.threads),
              tc);
      }
    }
    man.timing("train_seconds", seconds_since(t0));
    man["timings"]["epoch_seconds"] = epoch_seconds;
    save_checkpoint(model, out);
    man.output("checkpoint", out);
    man.output("log", log_file);
    man["seed"] = common.seed;
    man["encoder_config"] = to_json(cfg);
    man["train_config"] = to_json(tc);
    man["train_config"]["warmup_epochs"] = tf.warmup_epochs;
    man["pretrain_config"] = to_json(pre);
    if (!pr.losses.empty()) man["pretrain_final_loss"] = pr.losses.back();
    man["steps"] = step;
    man.write(manifest_path(common, out));
    std::cout << "trained " << step << " steps, parameters " << model.parameter_count() << ", wrote "
              << out << '\n';
    return kExitOk;
  }

  CLI::App* ran = nullptr;
};

// --------------------------------------------------------------------------
// mine-negatives

struct MineCmd {
  Common common;
  std::string model_path, corpus, queries, qrels, out;
  std::size_t hardness = 20;

  void add(CLI::App& app) {
    auto* sub = app.add_subcommand("mine-negatives", "Mine static hard negatives with a warm model");
    add_common(sub, common, true);
    sub->add_option("--model", model_path)->required()->check(CLI::ExistingFile);
    sub->add_option("--corpus", corpus)->required()->check(CLI::ExistingFile);
    sub->add_option("--queries", queries)->required()->check(CLI::ExistingFile);
    sub->add_option("--qrels", qrels)->required()->check(CLI::ExistingFile);
    sub->add_option("--hardness", hardness, "Top-K pool")->check(CLI::PositiveNumber);
    sub->add_option("--out", out, "Triples TSV")->required();
    sub->callback([this, sub] { ran = sub; });
  }

  int run(const std::vector<std::string>& argv) {
    Manifest man("mine-negatives", argv);
    const BiEncoder model = load_checkpoint(model_path);
    const auto docs = read_records(corpus);
    const auto qs = read_records(queries);
    validate_records(docs, model.config.vocab_size, corpus);
    validate_records(qs, model.config.vocab_size, queries);
    const SegmentIndex idx = build_index(model.doc, model.config, docs, common.threads);
    const auto ts = mine_hard_negatives(model, idx, qs, parse_qrels(qrels), hardness, common.seed,
                                        common.threads);
    write_triples(out, ts);
    for (auto [k, v] : {std::pair{"model", model_path}, {"corpus", corpus}, {"queries", queries},
                        {"qrels", qrels}})
      man.input(k, v);
    man.output("triples", out);
    man["seed"] = common.seed;
    man["hardness"] = hardness;
    man["encoder_config"] = to_json(model.config);
    man.write(manifest_path(common, out));
    std::cout << "wrote " << ts.size() << " triples to " << out << '\n';
    return kExitOk;
  }

  CLI::App* ran = nullptr;
};

// --------------------------------------------------------------------------
// index

struct IndexCmd {
  Common common;
  std::string model_path, corpus, out;

  void add(CLI::App& app) {
    auto* sub = app.add_subcommand("index", "Encode a corpus into a segment index");
    add_common(sub, common, false);
    sub->add_option("--model", model_path)->required()->check(CLI::ExistingFile);
    sub->add_option("--corpus", corpus)->required()->check(CLI::ExistingFile);
    sub->add_option("--out", out, "Index file")->required();
    sub->callback([this, sub] { ran = sub; });
  }

  int run(const std::vector<std::string>& argv) {
    Manifest man("index", argv);
    const BiEncoder model = load_checkpoint(model_path);
    const auto docs = read_records(corpus);
    const auto t0 = std::chrono::steady_clock::now();
    BuildReport report;
    const SegmentIndex idx = build_index(model.doc, model.config, docs, common.threads, &report);
    man.timing("encode_seconds", seconds_since(t0));
    save_index(idx, out);
    man.input("model", model_path);
    man.input("corpus", corpus);
    man.output("index", out);
    man["records"] = idx.size();
    man["documents_encoded"] = report.encoded;
    man["failures"] = report.failures;
    man["encoder_config"] = to_json(model.config);
    man.write(manifest_path(common, out));
    std::cout << "indexed " << report.encoded << " documents (" << idx.size() << " segment records)";
    if (!report.failures.empty()) {
      std::cout << ", " << report.failures.size() << " failed\n";
      return kExitFailure;
    }
    std::cout << '\n';
    return kExitOk;
  }

  CLI::App* ran = nullptr;
};

// --------------------------------------------------------------------------
// search

struct SearchCmd {
  Common common;
  std::string model_path, index_path, queries, out, tag = "sedr";
  std::size_t top = 100;

  void add(CLI::App& app) {
    auto* sub = app.add_subcommand("search", "Retrieve documents for queries into a TREC run");
    add_common(sub, common, false);
    sub->add_option("--model", model_path)->required()->check(CLI::ExistingFile);
    sub->add_option("--index", index_path)->required()->check(CLI::ExistingFile);
    sub->add_option("--queries", queries)->required()->check(CLI::ExistingFile);
    sub->add_option("--top", top, "Documents per query");
    sub->add_option("--tag", tag, "Run tag column");
    sub->add_option("--out", out, "Run file")->required();
    sub->callback([this, sub] { ran = sub; });
  }

  int run(const std::vector<std::string>& argv) {
    Manifest man("search", argv);
    const BiEncoder model = load_checkpoint(model_path);
    const SegmentIndex idx = load_index(index_path);
    const auto qs = read_records(queries);
    validate_records(qs, model.config.vocab_size, queries);
    if (idx.size() > 0 && idx.dim != model.config.hidden_dim)
      throw DimensionError(detail::concat("index dim ", idx.dim, " vs model dim ",
                                          model.config.hidden_dim));
    const auto t0 = std::chrono::steady_clock::now();
    const auto qv = encode_queries(model.query, model.config, qs, common.threads);
    const auto hits = batch_search(idx, qv, top, common.threads);
    man.timing("search_seconds", seconds_since(t0));
    auto run_out = text::open_output(out);
    for (std::size_t i = 0; i < qs.size(); ++i) write_trec_run(run_out, qs[i].id, hits[i], tag);
    man.input("model", model_path);
    man.input("index", index_path);
    man.input("queries", queries);
    man.output("run", out);
    man["top"] = top;
    man["tag"] = tag;
    man.write(manifest_path(common, out));
    return kExitOk;
  }

  CLI::App* ran = nullptr;
};

// --------------------------------------------------------------------------
// eval

struct EvalCmd {
  Common common;
  std::string run_path, qrels, strata, out;
  std::vector<std::size_t> length_bounds;

  void add(CLI::App& app) {
    auto* sub = app.add_subcommand("eval", "Score a TREC run against qrels");
    add_common(sub, common, false);
    sub->add_option("--run", run_path)->required()->check(CLI::ExistingFile);
    sub->add_option("--qrels", qrels)->required()->check(CLI::ExistingFile);
    sub->add_option("--strata", strata, "Per-query metadata TSV for stratified rows")
        ->check(CLI::ExistingFile);
    sub->add_option("--length-bounds", length_bounds, "Document-length stratum bounds")
        ->delimiter(',');
    sub->add_option("--out", out, "Report file (default: <run>.eval)");
    sub->callback([this, sub] { ran = sub; });
  }

  int run(const std::vector<std::string>& argv) {
    if (!length_bounds.empty() && strata.empty()) throw UsageError("--length-bounds needs --strata");
    Manifest man("eval", argv);
    const Run run = parse_run(run_path);
    const Qrels judged = parse_qrels(qrels);
    const Metrics m = compute_metrics(run, judged);
    std::vector<StratumResult> rows{{"all", m.num_queries ? std::optional(m) : std::nullopt}};
    if (!strata.empty()) {
      const QueryMetaTable meta = read_query_meta(strata);
      std::size_t kmax = 1;
      for (const auto& [qid, q] : meta) kmax = std::max(kmax, q.relevant_ordinal + 1);
      auto ss = ordinal_strata(kmax);
      if (!length_bounds.empty()) {
        auto ls = length_strata(length_bounds);
        ss.insert(ss.end(), ls.begin(), ls.end());
      }
      const auto extra = stratified_report(run, judged, meta, ss);
      rows.insert(rows.end(), extra.begin(), extra.end());
      man.input("strata", strata);
    }
    std::ostringstream report;
    write_metrics_table(report, rows);
    report << metrics_line(m) << '\n';
    std::cout << report.str();
    const std::string out_file = out.empty() ? run_path + ".eval" : out;
    text::open_output(out_file) << report.str();
    man.input("run", run_path);
    man.input("qrels", qrels);
    man.output("report", out_file);
    json metrics = json::object();
    for (const auto& r : rows)
      metrics[r.name] = r.metrics ? json{{"mrr@100", r.metrics->mrr_at_100},
                                         {"ndcg@10", r.metrics->ndcg_at_10},
                                         {"recall@10", r.metrics->recall_at_10},
                                         {"recall@100", r.metrics->recall_at_100},
                                         {"queries", r.metrics->num_queries}}
                                  : json("n/a");
    man["metrics"] = metrics;
    man.write(manifest_path(common, out_file));
    return kExitOk;
  }

  CLI::App* ran = nullptr;
};

// --------------------------------------------------------------------------
// gradcheck

struct GradCheckCmd {
  Common common;
  EncoderFlags enc;
  BatchGradCheckSetup setup;
  std::string out;
  double threshold = 1e-4;

  void add(CLI::App& app) {
    auto* sub = app.add_subcommand("gradcheck", "Finite-difference check of the full batch loss");
    add_common(sub, common, true);
    enc.profile = "tiny";
    enc.add(sub);
    sub->add_option("--segments", setup.segments, "Segments per document");
    sub->add_option("--batch-size", setup.batch_size)->check(CLI::PositiveNumber);
    sub->add_option("--cache-entries", setup.cache_entries);
    sub->add_option("--coords", setup.num_coords, "Sampled coordinates")->check(CLI::PositiveNumber);
    sub->add_option("--out", out, "Report file; its manifest goes next to it");
    sub->callback([this, sub] { ran = sub; });
  }

  int run(const std::vector<std::string>& argv) {
    Manifest man("gradcheck", argv);
    const EncoderConfig cfg = enc.build();
    setup.seed = common.seed;
    const auto t0 = std::chrono::steady_clock::now();
    const GradCheckResult r = batch_loss_gradcheck(cfg, setup);
    const double secs = seconds_since(t0);
    std::ostringstream line;
    line << "max_relative_error=" << r.max_relative_error << " coords=" << r.coords_checked
         << " groups=" << r.groups_covered << " threshold=" << threshold << '\n';
    std::cout << line.str();
    man["seed"] = common.seed;
    man["encoder_config"] = to_json(cfg);
    man["max_relative_error"] = r.max_relative_error;
    man["coords_checked"] = r.coords_checked;
    man["groups_covered"] = r.groups_covered;
    man.timing("check_seconds", secs);
    const std::string out_file = out.empty() ? "gradcheck.txt" : out;
    text::open_output(out_file) << line.str();
    man.output("report", out_file);
    man.write(manifest_path(common, out_file));
    return r.max_relative_error < threshold ? kExitOk : kExitFailure;
  }

  CLI::App* ran = nullptr;
};

// --------------------------------------------------------------------------
// compare-patterns

struct ComparePatternsCmd {
  Common common;
  EncoderFlags enc;
  TrainFlags tf;
  PretrainFlags pf;
  std::string data_dir, out, checkpoint_dir;
  std::vector<std::string> patterns{"maxp", "segint", "head", "global"};

  void add(CLI::App& app) {
    auto* sub = app.add_subcommand("compare-patterns",
                                   "Train every interaction pattern on one gen-corpus directory");
    add_common(sub, common, true);
    enc.add(sub);
    tf.add(sub);
    pf.add(sub);
    tf.warmup_epochs = 1;
    sub->add_option("--data", data_dir, "gen-corpus output directory")->required()
        ->check(CLI::ExistingDirectory);
    sub->add_option("--patterns", patterns)->delimiter(',')
        ->check(CLI::IsMember({"maxp", "segint", "head", "global"}));
    sub->add_option("--checkpoint-dir", checkpoint_dir, "Also save one checkpoint per pattern");
    sub->add_option("--out", out, "Comparison table")->required();
    sub->callback([this, sub] { ran = sub; });
  }

  int run(const std::vector<std::string>& argv) {
    Manifest man("compare-patterns", argv);
    const auto docs = read_records(join_path(data_dir, "corpus.tsv"));
    const auto train_qs = read_records(join_path(data_dir, "train_queries.tsv"));
    const auto test_qs = read_records(join_path(data_dir, "test_queries.tsv"));
    const Qrels qrels = parse_qrels(join_path(data_dir, "qrels.txt"));
    Qrels test_qrels;
    for (const auto& q : test_qs)
      if (auto it = qrels.find(std::to_string(q.id)); it != qrels.end()) test_qrels.insert(*it);
    man.input("data", data_dir);

    PipelineConfig pc;
    pc.hard = tf.build(common.seed);
    pc.warmup = pc.hard;
    pc.warmup.epochs = tf.warmup_epochs;
    pc.init_seed = common.seed;
    pc.negative_seed = common.seed;
    pc.threads = common.threads;
    if (!checkpoint_dir.empty()) std::filesystem::create_directories(checkpoint_dir);

    // One warm-up shared by every pattern: it encodes segments in isolation,
    // so the result does not depend on the pattern.
    EncoderFlags base_flags = enc;
    base_flags.pattern = "maxp";
    const EncoderConfig base_cfg = base_flags.build();
    validate_records(docs, base_cfg.vocab_size, "corpus");
    BiEncoder base = BiEncoder::init(base_cfg, common.seed);
    const PretrainResult pre = pretrain_segments(base, docs, pf.build(common.seed));
    man.timing("pretrain_seconds", pre.seconds);

    std::ostringstream table;
    table << "pattern   params    sec/epoch  MRR@100  NDCG@10  R@10     R@100\n";
    json rows = json::array();
    for (const auto& name : patterns) {
      const TrainingData data{&docs, &train_qs, &qrels};
      const PipelineResult res =
          train_pipeline(with_pattern(base, *parse_pattern(name), common.seed + 1), data, pc);
      const Metrics m = compute_metrics(retrieve(res.model, docs, test_qs, 100, common.threads),
                                        test_qrels);
      double per_epoch = 0.0;
      for (double s : res.epoch_seconds) per_epoch += s;
      if (!res.epoch_seconds.empty()) per_epoch /= static_cast<double>(res.epoch_seconds.size());
      std::string col = name;
      col.resize(std::max<std::size_t>(col.size(), 9), ' ');
      std::string params = std::to_string(res.model.parameter_count());
      params.resize(std::max<std::size_t>(params.size(), 9), ' ');
      table << col << ' ' << params << ' ' << fixed(per_epoch, 2) << std::string(6, ' ')
            << fixed(m.mrr_at_100) << "   " << fixed(m.ndcg_at_10) << "   "
            << fixed(m.recall_at_10) << "   " << fixed(m.recall_at_100) << '\n';
      rows.push_back({{"pattern", name},
                      {"parameters", res.model.parameter_count()},
                      {"seconds_per_epoch", per_epoch},
                      {"mrr@100", m.mrr_at_100},
                      {"ndcg@10", m.ndcg_at_10},
                      {"recall@10", m.recall_at_10},
                      {"recall@100", m.recall_at_100}});
      if (!checkpoint_dir.empty()) {
        const std::string p = join_path(checkpoint_dir, (name + ".ckpt").c_str());
        save_checkpoint(res.model, p);
        man.output(name, p);
      }
    }
    std::cout << table.str();
    text::open_output(out) << table.str();
    man.output("table", out);
    man["seed"] = common.seed;
    man["encoder_config"] = to_json(enc.build());
    man["train_config"] = to_json(pc.hard);
    man["train_config"]["warmup_epochs"] = tf.warmup_epochs;
    man["pretrain_config"] = to_json(pf.build(common.seed));
    man["results"] = rows;
    man.write(manifest_path(common, out));
    return kExitOk;
  }

  CLI::App* ran = nullptr;
};

// --------------------------------------------------------------------------
// dispersion

struct DispersionCmd {
  Common common;
  std::vector<std::string> models;
  std::string corpus, out;

  void add(CLI::App& app) {
    auto* sub = app.add_subcommand("dispersion", "Mean segment dispersion per checkpoint");
    add_common(sub, common, false);
    sub->add_option("--model", models, "Checkpoint (repeatable)")->required()
        ->check(CLI::ExistingFile);
    sub->add_option("--corpus", corpus)->required()->check(CLI::ExistingFile);
    sub->add_option("--out", out, "Report file (default: dispersion.txt)");
    sub->callback([this, sub] { ran = sub; });
  }

  int run(const std::vector<std::string>& argv) {
    Manifest man("dispersion", argv);
    const auto docs = read_records(corpus);
    std::ostringstream table;
    json rows = json::array();
    for (const auto& path : models) {
      const BiEncoder model = load_checkpoint(path);
      validate_records(docs, model.config.vocab_size, corpus);
      const DispersionReport r = mean_dispersion(model, docs);
      table << pattern_name(model.config.pattern) << '\t' << fixed(r.mean, 6) << '\t' << r.documents
            << '\t' << path << '\n';
      rows.push_back({{"model", path},
                      {"pattern", std::string(pattern_name(model.config.pattern))},
                      {"mean_dispersion", r.mean},
                      {"documents", r.documents}});
      man.input(path, path);
    }
    std::cout << table.str();
    const std::string out_file = out.empty() ? "dispersion.txt" : out;
    text::open_output(out_file) << table.str();
    man.input("corpus", corpus);
    man.output("report", out_file);
    man["results"] = rows;
    man.write(manifest_path(common, out_file));
    return kExitOk;
  }

  CLI::App* ran = nullptr;
};

// --------------------------------------------------------------------------

inline int run_cli(int argc, const char* const* argv, std::ostream& err = std::cerr) {
  const std::vector<std::string> args(argv, argv + argc);
  CLI::App app{"Segment-representation dense retrieval for long documents"};
  app.require_subcommand(1);
  app.set_version_flag("--version", SEDR_VERSION);

  GenCorpusCmd gen;
  TrainCmd train_cmd;
  MineCmd mine;
  IndexCmd index_cmd;
  SearchCmd search_cmd;
  EvalCmd eval;
  GradCheckCmd grad;
  ComparePatternsCmd compare;
  DispersionCmd disp;
  try {
    const std::uint64_t seed = default_seed();
    for (Common* c : {&gen.common, &train_cmd.common, &mine.common, &grad.common, &compare.common})
      c->seed = seed;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  gen.add(app);
  train_cmd.add(app);
  mine.add(app);
  index_cmd.add(app);
  search_cmd.add(app);
  eval.add(app);
  grad.add(app);
  compare.add(app);
  disp.add(app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    std::ostringstream out;
    const int code = app.exit(e, out, out);
    if (code == 0) {
      std::cout << out.str();
      return kExitOk;
    }
    err << out.str();
    return kExitUsage;
  }

  try {
    if (gen.ran) return gen.run(args);
    if (train_cmd.ran) return train_cmd.run(args);
    if (mine.ran) return mine.run(args);
    if (index_cmd.ran) return index_cmd.run(args);
    if (search_cmd.ran) return search_cmd.run(args);
    if (eval.ran) return eval.run(args);
    if (grad.ran) return grad.run(args);
    if (compare.ran) return compare.run(args);
    if (disp.ran) return disp.run(args);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kExitFailure;
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << '\n';
    return kExitFailure;
  } catch (const ContractError& e) {
    err << "contract violation: " << e.what() << '\n';
    return kExitFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace sedr::cli
