#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "faithlab/corpus.hpp"
#include "faithlab/detail/parallel.hpp"
#include "faithlab/models.hpp"
#include "faithlab/rng.hpp"
#include "faithlab/saliency.hpp"

namespace faithlab {

// --- evaluator ---

// Classifier trained to score explanations: it sees randomly masked copies
// of the training inputs with their TRUE labels, never an explanation.
struct EvaluatorModel {
  Classifier clf;
  int M = 0;  // masked variants per instance
  std::uint64_t seed = 0;
};

// Original + M masked variants per instance, all carrying the true label.
inline LabeledCorpus expand_masked(const LabeledCorpus& train, int M, std::uint64_t seed) {
  if (M < 1) throw std::invalid_argument("expand_masked: M must be >= 1");
  LabeledCorpus out;
  out.num_labels = train.num_labels;
  out.split_tag = train.split_tag;
  out.label_names = train.label_names;
  out.instances.reserve(train.size() * (M + 1));
  for (const auto& inst : train.instances) {
    Document full = inst.doc;
    full.id = inst.doc.id + "#full";
    out.instances.push_back({std::move(full), inst.label});
    for (int m = 0; m < M; ++m) {
      Document masked = random_mask(inst.doc, rng::derive_seed(seed, "mask:" + inst.doc.id + "#" + std::to_string(m)));
      masked.id = inst.doc.id + "#m" + std::to_string(m);
      out.instances.push_back({std::move(masked), inst.label});
    }
  }
  return out;
}

inline EvaluatorModel train_evaluator(const LabeledCorpus& train, int M, std::uint64_t seed,
                                      double alpha = 1.0) {
  EvaluatorModel ev;
  ev.clf = Classifier::train_nb(expand_masked(train, M, seed), alpha);
  ev.M = M;
  ev.seed = seed;
  return ev;
}

// --- AUROC ---

// Mann-Whitney rank statistic with mid-rank ties. Agrees with all-pairs
// counting bitwise: both reduce to (wins + ties/2) / (pos*neg) computed
// from exactly representable half-integer sums.
inline double auroc(const std::vector<double>& scores, const std::vector<bool>& positives) {
  if (scores.size() != positives.size()) throw std::invalid_argument("auroc: length mismatch");
  const std::size_t n = scores.size();
  std::size_t np = 0;
  for (bool b : positives) np += b ? 1 : 0;
  const std::size_t nn = n - np;
  if (np == 0 || nn == 0) throw std::invalid_argument("auroc: need at least one positive and one negative");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double mid_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));  // 1-based
    for (std::size_t t = i; t < j; ++t) {
      if (positives[order[t]]) rank_sum_pos += mid_rank;
    }
    i = j;
  }
  const double np_d = static_cast<double>(np);
  return (rank_sum_pos - np_d * (np_d + 1.0) / 2.0) / (np_d * static_cast<double>(nn));
}

// Macro one-vs-rest over per-label probabilities. Labels with only one
// class present are skipped; if every label is degenerate, throws.
inline double macro_auroc(const std::vector<ProbDistribution>& probs, const std::vector<int>& golds,
                          int num_labels) {
  if (probs.size() != golds.size()) throw std::invalid_argument("macro_auroc: length mismatch");
  double sum = 0.0;
  int used = 0;
  for (int y = 0; y < num_labels; ++y) {
    std::vector<double> scores(probs.size());
    std::vector<bool> pos(probs.size());
    std::size_t npos = 0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      scores[i] = probs[i][y];
      pos[i] = golds[i] == y;
      npos += pos[i] ? 1 : 0;
    }
    if (npos == 0 || npos == probs.size()) continue;
    sum += auroc(scores, pos);
    ++used;
  }
  if (used == 0) throw std::invalid_argument("macro_auroc: all labels single-class");
  return sum / used;
}

// --- metrics report ---

enum class CutoffRule { Relative, Absolute };

struct EvalXReport {
  double acc = 0.0;     // prediction model on original inputs
  double auroc = 0.0;   // same, macro one-vs-rest
  double eacc = 0.0;    // evaluator on explanation-only inputs, true labels
  double eauroc = 0.0;
  double label_recovery_rate = -1.0;  // filled by the encoding pipeline; -1 = not measured
  double fallback_rate = 0.0;
  bool encoded = false;
  int k = 0;
};

inline bool encoded_flag(double acc, double auroc_v, double eacc, double eauroc, CutoffRule rule) {
  if (rule == CutoffRule::Relative) return eacc < 0.9 * acc || eauroc < 0.9 * auroc_v;
  return eacc < acc - 0.1 || eauroc < auroc_v - 0.1;
}

inline double accuracy_on(const Classifier& clf, const LabeledCorpus& corpus) {
  int hits = 0;
  for (const auto& inst : corpus.instances) hits += clf.predict(inst.doc) == inst.label ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(corpus.size());
}

inline double macro_auroc_on(const Classifier& clf, const LabeledCorpus& corpus) {
  std::vector<ProbDistribution> probs(corpus.size());
  std::vector<int> golds(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    probs[i] = clf.predict_proba(corpus.instances[i].doc);
    golds[i] = corpus.instances[i].label;
  }
  return macro_auroc(probs, golds, corpus.num_labels);
}

// Scores the evaluator on explanation-only inputs against TRUE labels and
// applies the sharp-decline cutoff to the supplied base-model scores.
inline EvalXReport eval_explanations(const Classifier& evaluator, const std::vector<Explanation>& explanations,
                                     const LabeledCorpus& corpus, double base_acc, double base_auroc,
                                     CutoffRule rule = CutoffRule::Relative, int threads = 1) {
  std::unordered_map<std::string, const Explanation*> by_id;
  for (const auto& e : explanations) by_id[e.doc_id] = &e;

  const std::size_t n = corpus.size();
  std::vector<ProbDistribution> probs(n);
  std::vector<int> golds(n), hits(n);
  detail::parallel_for(n, threads, [&](std::size_t i) {
    const auto& inst = corpus.instances[i];
    auto it = by_id.find(inst.doc.id);
    if (it == by_id.end()) {
      throw std::runtime_error("eval_explanations: no explanation for instance '" + inst.doc.id + "'");
    }
    probs[i] = evaluator.predict_proba(extract(inst.doc, it->second->positions));
    golds[i] = inst.label;
    hits[i] = probs[i].argmax() == inst.label ? 1 : 0;
  });

  EvalXReport rep;
  rep.acc = base_acc;
  rep.auroc = base_auroc;
  rep.eacc = static_cast<double>(std::accumulate(hits.begin(), hits.end(), 0)) / static_cast<double>(n);
  rep.eauroc = macro_auroc(probs, golds, corpus.num_labels);
  rep.encoded = encoded_flag(rep.acc, rep.auroc, rep.eacc, rep.eauroc, rule);
  if (!explanations.empty()) rep.k = explanations.front().k();
  return rep;
}

inline EvalXReport eval_explanations(const EvaluatorModel& ev, const std::vector<Explanation>& explanations,
                                     const LabeledCorpus& corpus, double base_acc, double base_auroc,
                                     CutoffRule rule = CutoffRule::Relative, int threads = 1) {
  return eval_explanations(ev.clf, explanations, corpus, base_acc, base_auroc, rule, threads);
}

// --- Method 1: code-book encoding ---

// Smoothed (token, label) frequency table from the training split. The
// likelihood ratio of a token for label y is its frequency under y divided
// by its pooled frequency under all other labels.
class CodeBook {
 public:
  CodeBook() = default;

  static CodeBook build(const LabeledCorpus& train, double alpha = 1.0) {
    if (train.empty()) throw std::invalid_argument("codebook: empty corpus");
    if (!(alpha > 0.0)) throw std::invalid_argument("codebook: alpha must be > 0");
    CodeBook cb;
    cb.alpha_ = alpha;
    cb.num_labels_ = train.num_labels;
    cb.vocab_ = Vocabulary::build(train);
    cb.counts_.assign(train.num_labels, std::vector<std::int64_t>(cb.vocab_.size(), 0));
    cb.totals_.assign(train.num_labels, 0);
    for (const auto& inst : train.instances) {
      for (const auto& tok : inst.doc.tokens) {
        const int j = cb.vocab_.lookup(tok);
        if (j >= 0) {
          cb.counts_[inst.label][j] += 1;
          cb.totals_[inst.label] += 1;
        }
      }
    }
    return cb;
  }

  // Smoothed relative frequency of a token under one label. Tokens outside
  // the training vocabulary fall back to the pure-smoothing value.
  double freq(const std::string& token, int label) const {
    const int j = vocab_.lookup(token);
    const double cnt = j >= 0 ? static_cast<double>(counts_[label][j]) : 0.0;
    return (cnt + alpha_) / (static_cast<double>(totals_[label]) + alpha_ * vocab_.size());
  }

  // Smoothed frequency under the pool of all labels except `label`.
  double freq_other(const std::string& token, int label) const {
    const int j = vocab_.lookup(token);
    std::int64_t cnt = 0, total = 0;
    for (int y = 0; y < num_labels_; ++y) {
      if (y == label) continue;
      if (j >= 0) cnt += counts_[y][j];
      total += totals_[y];
    }
    return (static_cast<double>(cnt) + alpha_) / (static_cast<double>(total) + alpha_ * vocab_.size());
  }

  double ratio(const std::string& token, int label) const {
    return freq(token, label) / freq_other(token, label);
  }

  int num_labels() const { return num_labels_; }

 private:
  double alpha_ = 1.0;
  int num_labels_ = 0;
  Vocabulary vocab_;
  std::vector<std::vector<std::int64_t>> counts_;
  std::vector<std::int64_t> totals_;
};

// Encode the predicted label as the k input tokens most indicative of it.
// Needs nothing from the model beyond the prediction itself.
inline Explanation encode_likelihood_ratio(const Classifier& base, const CodeBook& cb,
                                           const Document& doc, int k) {
  if (doc.empty()) throw std::invalid_argument("encode_likelihood_ratio: empty document");
  if (k < 1) throw std::invalid_argument("encode_likelihood_ratio: k must be >= 1");
  const int yhat = base.predict(doc);
  Attribution attr;
  attr.scores.reserve(doc.size());
  for (const auto& tok : doc.tokens) attr.scores.push_back(cb.ratio(tok, yhat));
  attr.target_label = yhat;
  attr.method = "codebook";
  return top_k(attr, k, doc.id);
}

// Recover the encoded label: argmax over labels of the summed log ratio.
// Empty explanations tie at 0 and resolve to label 0.
inline int decode_explanation(const CodeBook& cb, const Document& expl_doc) {
  int best = 0;
  double best_sum = 0.0;
  for (int y = 0; y < cb.num_labels(); ++y) {
    double s = 0.0;
    for (const auto& tok : expl_doc.tokens) s += std::log(cb.ratio(tok, y));
    if (y == 0 || s > best_sum) {
      best = y;
      best_sum = s;
    }
  }
  return best;
}

// --- Method 2: evaluator-query encoding ---

struct QueryEncoding {
  Explanation expl;
  bool fallback = false;  // no single token made the evaluators output yhat
};

namespace detail_evalx {

struct Vote {
  int votes = 0;        // evaluators predicting yhat
  double mean_p = 0.0;  // mean evaluator probability of yhat
};

inline Vote tally(const std::vector<const Classifier*>& evals, const Document& sub, int yhat) {
  Vote v;
  for (const auto* ev : evals) {
    const auto p = ev->predict_proba(sub);
    if (p.argmax() == yhat) v.votes += 1;
    v.mean_p += p[yhat];
  }
  v.mean_p /= static_cast<double>(evals.size());
  return v;
}

}  // namespace detail_evalx

// Find one token the evaluators decode back to the predicted label: the
// first position whose single-token input gets a strict majority of
// evaluator votes for yhat. If none exists, fall back to the position with
// the highest mean evaluator probability of yhat and flag the instance.
inline QueryEncoding encode_by_query(const Classifier& base, const std::vector<const Classifier*>& evaluators,
                                     const Document& doc) {
  if (doc.empty()) throw std::invalid_argument("encode_by_query: empty document");
  if (evaluators.empty()) throw std::invalid_argument("encode_by_query: no evaluators");
  const int yhat = base.predict(doc);
  const int n = static_cast<int>(doc.size());
  const int needed = static_cast<int>(evaluators.size());

  int best_pos = 0;
  double best_p = -1.0;
  for (int t = 0; t < n; ++t) {
    const auto v = detail_evalx::tally(evaluators, extract(doc, {t}), yhat);
    if (2 * v.votes > needed) {
      QueryEncoding out;
      out.expl.positions = {t};
      out.expl.doc_id = doc.id;
      out.expl.method = "query";
      return out;
    }
    if (v.mean_p > best_p) {
      best_p = v.mean_p;
      best_pos = t;
    }
  }
  QueryEncoding out;
  out.expl.positions = {best_pos};
  out.expl.doc_id = doc.id;
  out.expl.method = "query";
  out.fallback = true;
  return out;
}

// Grow the single-token encoding by greedily adding the unused position
// that most improves the majority-vote margin for yhat (votes first, mean
// probability second, earliest position on ties). Returns one encoding per
// requested length; lengths must be positive and strictly increasing.
// Lengths beyond the document saturate at the full position set.
inline std::vector<QueryEncoding> extend_query_snapshots(const Classifier& base,
                                                         const std::vector<const Classifier*>& evaluators,
                                                         const Document& doc, const std::vector<int>& lengths) {
  if (lengths.empty()) throw std::invalid_argument("extend_query_snapshots: no lengths");
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    if (lengths[i] < 1 || (i > 0 && lengths[i] <= lengths[i - 1])) {
      throw std::invalid_argument("extend_query_snapshots: lengths must be positive and strictly increasing");
    }
  }
  QueryEncoding enc = encode_by_query(base, evaluators, doc);
  const int yhat = base.predict(doc);
  const int n = static_cast<int>(doc.size());

  std::vector<QueryEncoding> out;
  std::vector<bool> used(n, false);
  used[enc.expl.positions[0]] = true;
  std::size_t next = 0;
  for (int size = 1; ; ++size) {
    while (next < lengths.size() && std::min(lengths[next], n) == size) {
      out.push_back(enc);
      ++next;
    }
    if (next == lengths.size() || size == n) break;
    int best_t = -1;
    detail_evalx::Vote best_v;
    for (int t = 0; t < n; ++t) {
      if (used[t]) continue;
      auto ps = enc.expl.positions;
      ps.push_back(t);
      std::sort(ps.begin(), ps.end());
      const auto v = detail_evalx::tally(evaluators, extract(doc, ps), yhat);
      if (best_t < 0 || v.votes > best_v.votes || (v.votes == best_v.votes && v.mean_p > best_v.mean_p)) {
        best_t = t;
        best_v = v;
      }
    }
    enc.expl.positions.push_back(best_t);
    std::sort(enc.expl.positions.begin(), enc.expl.positions.end());
    used[best_t] = true;
  }
  while (out.size() < lengths.size()) out.push_back(enc);  // saturated at full length
  return out;
}

inline QueryEncoding extend_query_explanation(const Classifier& base,
                                              const std::vector<const Classifier*>& evaluators,
                                              const Document& doc, int L) {
  return extend_query_snapshots(base, evaluators, doc, {L}).front();
}

}  // namespace faithlab
