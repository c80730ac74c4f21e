#pragma once

// Text formats: corpus/query TSV (`id<TAB>space-separated ids`), training
// triples TSV, the training log, and a whitespace vocabulary tokenizer.

#include <charconv>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "sedr/config.hpp"
#include "sedr/encoder.hpp"
#include "sedr/error.hpp"
#include "sedr/training.hpp"

namespace sedr {

namespace text {

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

/// Splits on runs of spaces and tabs; no empty fields.
inline std::vector<std::string_view> fields(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
    const std::size_t b = i;
    while (i < s.size() && s[i] != ' ' && s[i] != '\t') ++i;
    if (i > b) out.push_back(s.substr(b, i - b));
  }
  return out;
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
  const auto* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && p == end;
}

inline std::string_view strip_cr(std::string_view s) {
  if (!s.empty() && s.back() == '\r') s.remove_suffix(1);
  return s;
}

[[noreturn]] inline void line_error(const std::string& source, std::size_t line,
                                    const std::string& msg) {
  throw FormatError(detail::concat(source, ":", line, ": ", msg));
}

inline std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path);
  return in;
}

inline std::ofstream open_output(const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path);
  return out;
}

}  // namespace text

/// Reads `id<TAB>ids` records; blank lines are skipped.
inline std::vector<DocumentRecord> read_records(std::istream& in, const std::string& source) {
  std::vector<DocumentRecord> out;
  std::string line;
  for (std::size_t no = 1; std::getline(in, line); ++no) {
    const std::string_view l = text::strip_cr(line);
    if (l.empty()) continue;
    const auto tab = l.find('\t');
    if (tab == std::string_view::npos) text::line_error(source, no, "missing tab separator");
    DocumentRecord rec;
    if (!text::parse_number(l.substr(0, tab), rec.id))
      text::line_error(source, no, "bad id '" + std::string(l.substr(0, tab)) + "'");
    for (auto f : text::fields(l.substr(tab + 1))) {
      std::uint32_t id;
      if (!text::parse_number(f, id))
        text::line_error(source, no, "bad token id '" + std::string(f) + "'");
      rec.token_ids.push_back(id);
    }
    out.push_back(std::move(rec));
  }
  return out;
}

inline std::vector<DocumentRecord> read_records(const std::string& path) {
  auto in = text::open_input(path);
  return read_records(in, path);
}

inline void write_records(std::ostream& out, const std::vector<DocumentRecord>& recs) {
  for (const auto& r : recs) {
    out << r.id << '\t';
    for (std::size_t i = 0; i < r.token_ids.size(); ++i) out << (i ? " " : "") << r.token_ids[i];
    out << '\n';
  }
}

inline void write_records(const std::string& path, const std::vector<DocumentRecord>& recs) {
  auto out = text::open_output(path);
  write_records(out, recs);
}

/// Checks every token id against the vocabulary.
inline void validate_records(const std::vector<DocumentRecord>& recs, std::size_t vocab_size,
                             const std::string& source) {
  for (const auto& r : recs)
    for (auto t : r.token_ids)
      SEDR_REQUIRE(t < vocab_size, source, ": record ", r.id, " has token id ", t,
                   " outside vocabulary of ", vocab_size);
}

inline std::vector<TrainingInstance> read_triples(std::istream& in, const std::string& source) {
  std::vector<TrainingInstance> out;
  std::string line;
  for (std::size_t no = 1; std::getline(in, line); ++no) {
    const std::string_view l = text::strip_cr(line);
    if (l.empty()) continue;
    const auto parts = text::split(l, '\t');
    if (parts.size() != 3) text::line_error(source, no, "expected 3 tab-separated fields");
    TrainingInstance t;
    if (!text::parse_number(parts[0], t.query_id) || !text::parse_number(parts[1], t.positive_id) ||
        !text::parse_number(parts[2], t.negative_id))
      text::line_error(source, no, "non-numeric id");
    if (t.positive_id == t.negative_id)
      text::line_error(source, no, "positive and negative are the same document");
    out.push_back(t);
  }
  return out;
}

inline std::vector<TrainingInstance> read_triples(const std::string& path) {
  auto in = text::open_input(path);
  return read_triples(in, path);
}

inline void write_triples(std::ostream& out, const std::vector<TrainingInstance>& ts) {
  for (const auto& t : ts) out << t.query_id << '\t' << t.positive_id << '\t' << t.negative_id << '\n';
}

inline void write_triples(const std::string& path, const std::vector<TrainingInstance>& ts) {
  auto out = text::open_output(path);
  write_triples(out, ts);
}

/// `step<TAB>loss<TAB>cache_fill`, loss printed round-trip exact.
inline void write_log_line(std::ostream& out, std::size_t step, double loss, std::size_t fill) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, loss);
  out << step << '\t' << std::string_view(buf, static_cast<std::size_t>(p - buf)) << '\t' << fill
      << '\n';
}

/// Id lookup over a record list.
class RecordIndex {
 public:
  explicit RecordIndex(const std::vector<DocumentRecord>& recs) : recs_(&recs) {
    for (std::size_t i = 0; i < recs.size(); ++i) {
      SEDR_REQUIRE(pos_.emplace(recs[i].id, i).second, "duplicate record id ", recs[i].id);
    }
  }
  bool contains(std::uint64_t id) const { return pos_.count(id) != 0; }
  const DocumentRecord& at(std::uint64_t id) const {
    auto it = pos_.find(id);
    SEDR_REQUIRE(it != pos_.end(), "unknown record id ", id);
    return (*recs_)[it->second];
  }

 private:
  const std::vector<DocumentRecord>* recs_;
  std::unordered_map<std::uint64_t, std::size_t> pos_;
};

/// Resolves triples against query and document records (which must outlive the result).
inline std::vector<TrainingExample> resolve_triples(const std::vector<TrainingInstance>& ts,
                                                    const RecordIndex& queries,
                                                    const RecordIndex& docs) {
  std::vector<TrainingExample> out;
  out.reserve(ts.size());
  for (const auto& t : ts)
    out.push_back({queries.at(t.query_id).token_ids, docs.at(t.positive_id).token_ids,
                   docs.at(t.negative_id).token_ids});
  return out;
}

/// Whitespace tokenizer over a vocabulary file (line number = id; ids 0..2 reserved).
class Vocabulary {
 public:
  static Vocabulary load(std::istream& in) {
    Vocabulary v;
    std::string line;
    while (std::getline(in, line)) {
      const auto tok = std::string(text::strip_cr(line));
      v.ids_.emplace(tok, static_cast<std::uint32_t>(v.tokens_.size()));
      v.tokens_.push_back(tok);
    }
    SEDR_REQUIRE_AS(FormatError, v.tokens_.size() > kSepId,
                    "vocabulary must list the reserved PAD, CLS and SEP entries");
    return v;
  }

  static Vocabulary load(const std::string& path) {
    auto in = text::open_input(path);
    return load(in);
  }

  std::size_t size() const { return tokens_.size(); }

  /// Unknown words are dropped; `unknown` (if given) counts them.
  std::vector<std::uint32_t> encode(std::string_view s, std::size_t* unknown = nullptr) const {
    std::vector<std::uint32_t> out;
    for (auto f : text::fields(s)) {
      auto it = ids_.find(std::string(f));
      if (it == ids_.end() || it->second <= kSepId) {
        if (unknown) ++*unknown;
        continue;
      }
      out.push_back(it->second);
    }
    return out;
  }

  const std::string& token(std::uint32_t id) const { return tokens_.at(id); }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::uint32_t> ids_;
};

}  // namespace sedr
