#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "faithlab/corpus.hpp"
#include "faithlab/detail/parallel.hpp"
#include "faithlab/models.hpp"
#include "faithlab/saliency.hpp"

namespace faithlab {

// Any confidence source: a base classifier, or a wrapper that hijacks
// masked inputs. The metrics below never know the difference.
using ConfidenceFn = std::function<ProbDistribution(const Document&)>;

inline ConfidenceFn as_confidence_fn(const Classifier& clf) {
  return [&clf](const Document& doc) { return clf.predict_proba(doc); };
}

// Confidence gain from keeping only the explanation. Negated relative to
// the original ERASER convention, so higher is better and the optimum for
// an instance with full-input confidence c is 1-c.
inline double sufficiency(const ConfidenceFn& f, const Document& doc, const Explanation& expl) {
  const auto full = f(doc);
  const int yhat = full.argmax();
  return f(extract(doc, expl.positions))[yhat] - full[yhat];
}

// Confidence lost by deleting the explanation; the optimum is c.
inline double comprehensiveness(const ConfidenceFn& f, const Document& doc, const Explanation& expl) {
  const auto full = f(doc);
  const int yhat = full.argmax();
  return full[yhat] - f(complement(doc, expl.positions))[yhat];
}

// Unweighted mean of per-label F1. A label with no true positives scores 0,
// including labels absent from both sequences.
inline double macro_f1(const std::vector<int>& preds, const std::vector<int>& golds, int num_labels) {
  if (preds.size() != golds.size()) throw std::invalid_argument("macro_f1: length mismatch");
  if (num_labels < 1) throw std::invalid_argument("macro_f1: num_labels must be >= 1");
  std::vector<long> tp(num_labels, 0), fp(num_labels, 0), fn(num_labels, 0);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const int p = preds[i], g = golds[i];
    if (p < 0 || p >= num_labels || g < 0 || g >= num_labels) {
      throw std::invalid_argument("macro_f1: label out of range");
    }
    if (p == g) {
      tp[p] += 1;
    } else {
      fp[p] += 1;
      fn[g] += 1;
    }
  }
  double sum = 0.0;
  for (int y = 0; y < num_labels; ++y) {
    const double denom = 2.0 * tp[y] + fp[y] + fn[y];
    sum += denom == 0.0 ? 0.0 : 2.0 * tp[y] / denom;
  }
  return sum / num_labels;
}

struct InstanceFaithfulness {
  std::string id;
  int predicted = 0;
  double c = 0.0;  // confidence on the full input
  double suff = 0.0;
  double comp = 0.0;
};

struct FaithfulnessReport {
  double mean_suff = 0.0;
  double mean_comp = 0.0;
  double mean_comp_plus_suff = 0.0;
  double macro_f1 = 0.0;
  std::vector<InstanceFaithfulness> instances;
  std::string method;
  std::string model_id;
};

// Scores one explanation per instance and aggregates. Throws if an instance
// has no explanation or any instance violates the metric range bounds.
inline FaithfulnessReport evaluate_faithfulness(const ConfidenceFn& f, const LabeledCorpus& corpus,
                                                const std::vector<Explanation>& explanations,
                                                int threads = 1) {
  std::unordered_map<std::string, const Explanation*> by_id;
  for (const auto& e : explanations) by_id[e.doc_id] = &e;

  const std::size_t n = corpus.size();
  FaithfulnessReport report;
  report.instances.resize(n);
  std::vector<int> preds(n), golds(n);
  detail::parallel_for(n, threads, [&](std::size_t i) {
    const auto& inst = corpus.instances[i];
    auto it = by_id.find(inst.doc.id);
    if (it == by_id.end()) {
      throw std::runtime_error("evaluate_faithfulness: no explanation for instance '" + inst.doc.id + "'");
    }
    const Explanation& expl = *it->second;
    const auto full = f(inst.doc);
    const int yhat = full.argmax();
    const double c = full[yhat];
    InstanceFaithfulness rec;
    rec.id = inst.doc.id;
    rec.predicted = yhat;
    rec.c = c;
    rec.suff = f(extract(inst.doc, expl.positions))[yhat] - c;
    rec.comp = c - f(complement(inst.doc, expl.positions))[yhat];
    constexpr double tol = 1e-9;
    if (rec.suff < -c - tol || rec.suff > 1.0 - c + tol || rec.comp < c - 1.0 - tol ||
        rec.comp > c + tol || rec.suff + rec.comp > 1.0 + tol) {
      throw std::runtime_error("evaluate_faithfulness: metric bound violated on instance '" + inst.doc.id + "'");
    }
    report.instances[i] = std::move(rec);
    preds[i] = yhat;
    golds[i] = inst.label;
  });

  for (const auto& rec : report.instances) {
    report.mean_suff += rec.suff;
    report.mean_comp += rec.comp;
  }
  report.mean_suff /= static_cast<double>(n);
  report.mean_comp /= static_cast<double>(n);
  double sum_both = 0.0;
  for (const auto& rec : report.instances) sum_both += rec.suff + rec.comp;
  report.mean_comp_plus_suff = sum_both / static_cast<double>(n);
  report.macro_f1 = faithlab::macro_f1(preds, golds, corpus.num_labels);
  if (!explanations.empty()) report.method = explanations.front().method;
  return report;
}

}  // namespace faithlab
