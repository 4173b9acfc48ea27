#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "faithlab/rng.hpp"

namespace faithlab {

// An ordered token sequence; the unit every model and metric consumes.
// May be empty (all tokens removed by a mask).
struct Document {
  std::vector<std::string> tokens;
  std::string id;

  std::size_t size() const { return tokens.size(); }
  bool empty() const { return tokens.empty(); }
  bool operator==(const Document&) const = default;
};

struct LabeledInstance {
  Document doc;
  int label = 0;
};

struct LabeledCorpus {
  std::vector<LabeledInstance> instances;
  int num_labels = 0;
  std::string split_tag;                 // "train", "test", or empty
  std::vector<std::string> label_names;  // dense index -> name; may be empty

  std::size_t size() const { return instances.size(); }
  bool empty() const { return instances.empty(); }
};

// The three masked-input constructions used in evaluation.
enum class MaskKind { ExplanationOnly, NonExplanation, RandomMask };

namespace detail {

inline bool is_ascii_alnum(unsigned char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9');
}

inline bool is_ascii_space(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

inline char ascii_lower(unsigned char c) {
  return (c >= 'A' && c <= 'Z') ? static_cast<char>(c + 32) : static_cast<char>(c);
}

}  // namespace detail

// Lowercase + whitespace/punctuation split. Word characters are ASCII
// alphanumerics plus any non-ASCII byte (UTF-8 sequences stay intact);
// every other non-space character becomes its own token.
inline Document tokenize(std::string_view text) {
  Document doc;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) {
      doc.tokens.push_back(cur);
      cur.clear();
    }
  };
  for (char raw : text) {
    const auto c = static_cast<unsigned char>(raw);
    if (c >= 0x80 || detail::is_ascii_alnum(c)) {
      cur.push_back(detail::ascii_lower(c));
    } else {
      flush();
      if (!detail::is_ascii_space(c)) doc.tokens.push_back(std::string(1, raw));
    }
  }
  flush();
  return doc;
}

namespace detail {

// One line of RFC-4180-ish csv; embedded newlines are not supported.
inline std::vector<std::string> split_csv_line(const std::string& line, std::size_t line_no) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"' && cur.empty()) {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (quoted) {
    throw std::runtime_error("csv: unterminated quote at line " + std::to_string(line_no));
  }
  fields.push_back(std::move(cur));
  return fields;
}

struct RawRecord {
  std::string id;
  std::string text;
  std::string label;
};

inline LabeledCorpus corpus_from_records(std::vector<RawRecord> records) {
  // Label names map to dense integers in sorted order.
  std::set<std::string> names;
  for (const auto& r : records) names.insert(r.label);
  std::vector<std::string> sorted(names.begin(), names.end());
  auto label_index = [&](const std::string& name) {
    return static_cast<int>(std::lower_bound(sorted.begin(), sorted.end(), name) - sorted.begin());
  };

  LabeledCorpus corpus;
  corpus.num_labels = static_cast<int>(sorted.size());
  corpus.label_names = sorted;
  std::set<std::string> seen_ids;
  for (auto& r : records) {
    if (!seen_ids.insert(r.id).second) {
      throw std::runtime_error("corpus: duplicate instance id '" + r.id + "'");
    }
    Document doc = tokenize(r.text);
    doc.id = r.id;
    corpus.instances.push_back({std::move(doc), label_index(r.label)});
  }
  return corpus;
}

}  // namespace detail

// Loads a labeled corpus from jsonl ({"id","text","label"} per line) or csv
// (header row id,text,label). Labels are mapped to dense integers via sorted
// label-name order; num_labels is inferred.
inline LabeledCorpus load_corpus(const std::string& path, const std::string& format) {
  if (format != "jsonl" && format != "csv") {
    throw std::invalid_argument("load_corpus: unknown format '" + format + "'");
  }
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_corpus: cannot open '" + path + "'");

  std::vector<detail::RawRecord> records;
  std::string line;
  std::size_t line_no = 0;
  if (format == "jsonl") {
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      nlohmann::json rec = nlohmann::json::parse(line, nullptr, false);
      if (rec.is_discarded() || !rec.is_object() || !rec.contains("text") ||
          !rec.contains("label") || !rec["text"].is_string() || !rec["label"].is_string()) {
        throw std::runtime_error("load_corpus: malformed record at line " + std::to_string(line_no));
      }
      std::string id = rec.contains("id") && rec["id"].is_string()
                           ? rec["id"].get<std::string>()
                           : "line-" + std::to_string(line_no);
      records.push_back({std::move(id), rec["text"].get<std::string>(), rec["label"].get<std::string>()});
    }
  } else {
    if (!std::getline(in, line)) throw std::runtime_error("load_corpus: empty csv file '" + path + "'");
    ++line_no;
    auto header = detail::split_csv_line(line, line_no);
    if (header != std::vector<std::string>{"id", "text", "label"}) {
      throw std::runtime_error("load_corpus: csv header must be id,text,label");
    }
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      auto fields = detail::split_csv_line(line, line_no);
      if (fields.size() != 3) {
        throw std::runtime_error("load_corpus: malformed record at line " + std::to_string(line_no));
      }
      records.push_back({fields[0], fields[1], fields[2]});
    }
  }
  return detail::corpus_from_records(std::move(records));
}

// Writes the corpus in the jsonl interchange format. label_names[i] is the
// serialized name of label i; tokens are joined with single spaces.
inline void save_corpus(const LabeledCorpus& corpus, const std::string& path,
                        const std::vector<std::string>& label_names) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_corpus: cannot write '" + path + "'");
  for (const auto& inst : corpus.instances) {
    std::string text;
    for (std::size_t i = 0; i < inst.doc.tokens.size(); ++i) {
      if (i) text.push_back(' ');
      text += inst.doc.tokens[i];
    }
    nlohmann::json rec{{"id", inst.doc.id}, {"text", text}, {"label", label_names.at(inst.label)}};
    out << rec.dump() << "\n";
  }
}

// Same, using the corpus's own label names. Unnamed labels get zero-padded
// numerals so a reload maps them back to the same dense indices.
inline void save_corpus(const LabeledCorpus& corpus, const std::string& path) {
  if (!corpus.label_names.empty()) {
    save_corpus(corpus, path, corpus.label_names);
    return;
  }
  std::vector<std::string> names;
  for (int y = 0; y < corpus.num_labels; ++y) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "label_%02d", y);
    names.emplace_back(buf);
  }
  save_corpus(corpus, path, names);
}

// Deterministic stratified split. Per-label test counts are
// round(test_fraction * group size), so a balanced corpus stays balanced.
inline std::pair<LabeledCorpus, LabeledCorpus> split(const LabeledCorpus& corpus,
                                                     double test_fraction, std::uint64_t seed) {
  if (corpus.empty()) throw std::invalid_argument("split: corpus is empty");
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw std::invalid_argument("split: test_fraction must lie in (0,1)");
  }
  std::vector<std::vector<std::size_t>> by_label(corpus.num_labels);
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    by_label.at(corpus.instances[i].label).push_back(i);
  }
  rng::Stream stream(seed);
  std::vector<char> in_test(corpus.size(), 0);
  for (auto& group : by_label) {
    stream.shuffle(group);
    const auto k = static_cast<std::size_t>(
        std::llround(test_fraction * static_cast<double>(group.size())));
    for (std::size_t j = 0; j < k && j < group.size(); ++j) in_test[group[j]] = 1;
  }
  LabeledCorpus train, test;
  train.num_labels = test.num_labels = corpus.num_labels;
  train.label_names = test.label_names = corpus.label_names;
  train.split_tag = "train";
  test.split_tag = "test";
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    (in_test[i] ? test : train).instances.push_back(corpus.instances[i]);
  }
  if (train.empty() || test.empty()) {
    throw std::invalid_argument("split: test_fraction produces an empty side");
  }
  return {std::move(train), std::move(test)};
}

namespace detail {

inline std::vector<int> checked_positions(const Document& doc, std::vector<int> positions) {
  std::sort(positions.begin(), positions.end());
  positions.erase(std::unique(positions.begin(), positions.end()), positions.end());
  for (int p : positions) {
    if (p < 0 || static_cast<std::size_t>(p) >= doc.size()) {
      throw std::out_of_range("position " + std::to_string(p) + " out of range for document '" +
                              doc.id + "' of length " + std::to_string(doc.size()));
    }
  }
  return positions;
}

}  // namespace detail

// Tokens at the given positions, original order preserved. This is the
// explanation-only input when the positions come from an explanation.
inline Document extract(const Document& doc, const std::vector<int>& positions) {
  auto sorted = detail::checked_positions(doc, positions);
  Document out;
  out.id = doc.id;
  out.tokens.reserve(sorted.size());
  for (int p : sorted) out.tokens.push_back(doc.tokens[p]);
  return out;
}

// Tokens at positions NOT in the set, original order preserved (the
// non-explanation input).
inline Document complement(const Document& doc, const std::vector<int>& positions) {
  auto sorted = detail::checked_positions(doc, positions);
  std::vector<char> drop(doc.size(), 0);
  for (int p : sorted) drop[p] = 1;
  Document out;
  out.id = doc.id;
  out.tokens.reserve(doc.size() - sorted.size());
  for (std::size_t i = 0; i < doc.size(); ++i) {
    if (!drop[i]) out.tokens.push_back(doc.tokens[i]);
  }
  return out;
}

// Randomly masked variant: a keep rate u is drawn uniformly from [0,1), then
// each token survives independently with probability u. Covers every
// sparsity level, which the masked-input evaluator must handle.
inline Document random_mask(const Document& doc, std::uint64_t seed) {
  rng::Stream stream(seed);
  const double keep_rate = stream.uniform();
  Document out;
  out.id = doc.id;
  for (const auto& tok : doc.tokens) {
    if (stream.uniform() < keep_rate) out.tokens.push_back(tok);
  }
  return out;
}

inline Document apply_mask(const Document& doc, MaskKind kind, const std::vector<int>& positions,
                           std::uint64_t seed = 0) {
  switch (kind) {
    case MaskKind::ExplanationOnly:
      return extract(doc, positions);
    case MaskKind::NonExplanation:
      return complement(doc, positions);
    case MaskKind::RandomMask:
      return random_mask(doc, seed);
  }
  throw std::logic_error("apply_mask: bad kind");
}

}  // namespace faithlab
