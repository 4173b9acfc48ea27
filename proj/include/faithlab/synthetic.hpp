#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

#include "faithlab/corpus.hpp"
#include "faithlab/rng.hpp"

namespace faithlab {

// Class-conditional multinomial text. The tiered profile gives each class a
// small block of strongly indicative tokens and a larger mildly indicative
// block over a shared neutral tail, which yields high but not degenerate
// classifier confidence at the default document lengths.
//
// The default length law is deliberately narrow: with documents of 38..42
// tokens and 10% explanations, explanation-only inputs have 4..5 tokens and
// non-explanation inputs 34..37, so the three case families occupy disjoint
// length bands that even a linear detector can carve up. This is the
// desk-scale stand-in for the syntactic truncation cues large models pick
// up on.
struct SyntheticParams {
  int vocab_size = 2000;
  int num_classes = 2;
  std::string profile = "tiered";  // tiered | disjoint | uniform
  int len_min = 38;
  int len_max = 42;
  int n = 2500;
  int strong_per_class = 40;   // tiered only
  double strong_odds = 20.0;   // weight multiplier for a class's strong block
  int medium_per_class = 200;  // tiered only
  double medium_odds = 3.0;
};

inline std::vector<std::string> synthetic_label_names(int num_classes) {
  std::vector<std::string> names;
  for (int c = 0; c < num_classes; ++c) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "label_%02d", c);
    names.emplace_back(buf);
  }
  return names;
}

inline LabeledCorpus generate_synthetic_corpus(const SyntheticParams& p, std::uint64_t seed) {
  if (p.num_classes < 2) throw std::invalid_argument("synthetic corpus: need at least 2 classes");
  if (p.n < 10 * p.num_classes) throw std::invalid_argument("synthetic corpus: n must be >= 10 * classes");
  if (p.vocab_size < p.num_classes) throw std::invalid_argument("synthetic corpus: vocabulary smaller than class count");
  if (p.len_min < 1 || p.len_max < p.len_min) throw std::invalid_argument("synthetic corpus: bad length range");
  if (p.profile == "tiered") {
    if (!(p.strong_odds > 0.0) || !(p.medium_odds > 0.0) || p.strong_per_class < 0 || p.medium_per_class < 0) {
      throw std::invalid_argument("synthetic corpus: bad tier parameters");
    }
    if (p.vocab_size < p.num_classes * (p.strong_per_class + p.medium_per_class)) {
      throw std::invalid_argument("synthetic corpus: vocabulary too small for the tier blocks");
    }
  } else if (p.profile != "disjoint" && p.profile != "uniform") {
    throw std::invalid_argument("synthetic corpus: unknown profile '" + p.profile + "'");
  }

  std::vector<std::string> token_names(p.vocab_size);
  for (int v = 0; v < p.vocab_size; ++v) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "w%04d", v);
    token_names[v] = buf;
  }

  // Per-class cumulative sampling tables.
  std::vector<std::vector<double>> cdf(p.num_classes, std::vector<double>(p.vocab_size, 0.0));
  for (int c = 0; c < p.num_classes; ++c) {
    std::vector<double> w(p.vocab_size, 1.0);
    if (p.profile == "tiered") {
      const int strong_lo = c * p.strong_per_class;
      for (int v = strong_lo; v < strong_lo + p.strong_per_class; ++v) w[v] = p.strong_odds;
      const int medium_lo = p.num_classes * p.strong_per_class + c * p.medium_per_class;
      for (int v = medium_lo; v < medium_lo + p.medium_per_class; ++v) w[v] = p.medium_odds;
    } else if (p.profile == "disjoint") {
      const int slice = p.vocab_size / p.num_classes;
      std::fill(w.begin(), w.end(), 0.0);
      const int lo = c * slice;
      const int hi = c == p.num_classes - 1 ? p.vocab_size : lo + slice;
      for (int v = lo; v < hi; ++v) w[v] = 1.0;
    }
    double acc = 0.0;
    for (int v = 0; v < p.vocab_size; ++v) {
      acc += w[v];
      cdf[c][v] = acc;
    }
    for (int v = 0; v < p.vocab_size; ++v) cdf[c][v] /= acc;
    cdf[c][p.vocab_size - 1] = 1.0;
  }

  LabeledCorpus corpus;
  corpus.num_labels = p.num_classes;
  corpus.split_tag = "all";
  corpus.label_names = synthetic_label_names(p.num_classes);
  corpus.instances.reserve(p.n);
  for (int i = 0; i < p.n; ++i) {
    const int label = i % p.num_classes;
    char idbuf[24];
    std::snprintf(idbuf, sizeof idbuf, "syn-%06d", i);
    Document doc;
    doc.id = idbuf;
    rng::Stream stream(rng::derive_seed(seed, std::string("doc:") + idbuf));
    const int len = static_cast<int>(stream.uniform_int(p.len_min, p.len_max));
    doc.tokens.reserve(len);
    for (int t = 0; t < len; ++t) {
      const double u = stream.uniform();
      const auto it = std::lower_bound(cdf[label].begin(), cdf[label].end(), u);
      const int v = static_cast<int>(it - cdf[label].begin());
      doc.tokens.push_back(token_names[std::min(v, p.vocab_size - 1)]);
    }
    corpus.instances.push_back({std::move(doc), label});
  }
  return corpus;
}

}  // namespace faithlab
