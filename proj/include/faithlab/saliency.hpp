#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "faithlab/corpus.hpp"
#include "faithlab/detail/linalg.hpp"
#include "faithlab/models.hpp"
#include "faithlab/rng.hpp"

namespace faithlab {

enum class SaliencyMethod { Lime, Gradient, IntegratedGradients, Occlusion, Random };

inline std::string to_string(SaliencyMethod m) {
  switch (m) {
    case SaliencyMethod::Lime: return "lime";
    case SaliencyMethod::Gradient: return "gradient";
    case SaliencyMethod::IntegratedGradients: return "ig";
    case SaliencyMethod::Occlusion: return "occlusion";
    case SaliencyMethod::Random: return "random";
  }
  throw std::logic_error("unreachable");
}

inline SaliencyMethod saliency_method_from_string(const std::string& s) {
  if (s == "lime") return SaliencyMethod::Lime;
  if (s == "gradient") return SaliencyMethod::Gradient;
  if (s == "ig") return SaliencyMethod::IntegratedGradients;
  if (s == "occlusion") return SaliencyMethod::Occlusion;
  if (s == "random") return SaliencyMethod::Random;
  throw std::invalid_argument("unknown saliency method '" + s + "'");
}

// Per-position importance scores for the predicted label.
struct Attribution {
  std::vector<double> scores;  // one per token position
  int target_label = 0;        // always the predicted label
  std::string method;
};

// Ordered subset of a document's token positions.
struct Explanation {
  std::vector<int> positions;  // strictly increasing
  std::string doc_id;
  std::string method;

  int k() const { return static_cast<int>(positions.size()); }
};

struct LimeOptions {
  int n_samples = 200;
  double keep_prob = 0.5;
  double kernel_width = 0.75;
  double ridge_lambda = 1.0;
};

// Local linear surrogate fit to the model's confidence on perturbed copies
// of the document. Masks drop each position independently; samples are
// weighted by exp(-d^2/width^2) where d is the fraction of tokens removed.
inline Attribution lime_attribution(const Classifier& clf, const Document& doc,
                                    const LimeOptions& opt, std::uint64_t seed) {
  const int n = static_cast<int>(doc.size());
  if (n == 0) throw std::invalid_argument("lime_attribution: empty document");
  if (opt.n_samples < n + 1) {
    throw std::invalid_argument("lime_attribution: n_samples must be at least len(doc)+1");
  }
  const int yhat = clf.predict(doc);
  rng::Stream stream(seed);

  // Design matrix columns: intercept + one indicator per position.
  const int dim = n + 1;
  std::vector<double> xtwx(static_cast<std::size_t>(dim) * dim, 0.0);
  std::vector<double> xtwy(dim, 0.0);
  std::vector<int> mask(n);
  std::vector<double> row(dim);
  std::vector<int> kept;
  for (int s = 0; s < opt.n_samples; ++s) {
    kept.clear();
    for (int t = 0; t < n; ++t) {
      mask[t] = stream.uniform() < opt.keep_prob ? 1 : 0;
      if (mask[t]) kept.push_back(t);
    }
    const double d = static_cast<double>(n - static_cast<int>(kept.size())) / n;
    const double w = std::exp(-(d * d) / (opt.kernel_width * opt.kernel_width));
    const double y = clf.predict_proba(extract(doc, kept))[yhat];
    row[0] = 1.0;
    for (int t = 0; t < n; ++t) row[t + 1] = mask[t];
    for (int i = 0; i < dim; ++i) {
      if (row[i] == 0.0) continue;
      const double wi = w * row[i];
      for (int j = i; j < dim; ++j) xtwx[static_cast<std::size_t>(i) * dim + j] += wi * row[j];
      xtwy[i] += wi * y;
    }
  }
  // Fill the lower triangle and regularize the coefficients (not the intercept).
  for (int i = 0; i < dim; ++i) {
    for (int j = 0; j < i; ++j) {
      xtwx[static_cast<std::size_t>(i) * dim + j] = xtwx[static_cast<std::size_t>(j) * dim + i];
    }
  }
  for (int i = 1; i < dim; ++i) xtwx[static_cast<std::size_t>(i) * dim + i] += opt.ridge_lambda;
  const auto beta = detail::solve_linear_system(xtwx, xtwy);

  Attribution attr;
  attr.scores.assign(beta.begin() + 1, beta.end());
  attr.target_label = yhat;
  attr.method = "lime";
  return attr;
}

// Weight of the predicted label's logit at each occurrence; the input count
// contributes 1 per occurrence, so the score is the weight itself.
inline Attribution gradient_attribution(const Classifier& clf, const Document& doc) {
  if (clf.kind() != ModelKind::LogisticRegression) {
    throw std::logic_error("gradient_attribution: requires a logistic-regression model");
  }
  const int yhat = clf.predict(doc);
  const auto& m = clf.lr_model();
  const double* wrow = m.weights.data() + static_cast<std::size_t>(yhat) * m.dim;
  Attribution attr;
  attr.scores.reserve(doc.size());
  for (const auto& tok : doc.tokens) {
    const int j = clf.vocab().lookup(tok);
    attr.scores.push_back(j >= 0 ? wrow[j] : 0.0);
  }
  attr.target_label = yhat;
  attr.method = "gradient";
  return attr;
}

// Midpoint Riemann sum of the logit gradient along the straight path from
// the empty-count baseline to the document's count vector. Type-level
// attributions are split equally across a token's occurrences. The logit is
// linear in counts, so this reduces exactly to gradient_attribution; the sum
// is kept literal so the completeness identity is checked by construction
// rather than assumed.
inline Attribution integrated_gradients(const Classifier& clf, const Document& doc, int steps) {
  if (clf.kind() != ModelKind::LogisticRegression) {
    throw std::logic_error("integrated_gradients: requires a logistic-regression model");
  }
  if (steps < 1) throw std::invalid_argument("integrated_gradients: steps must be >= 1");
  const int yhat = clf.predict(doc);
  const auto& m = clf.lr_model();
  const double* wrow = m.weights.data() + static_cast<std::size_t>(yhat) * m.dim;
  const auto x = count_features(clf.vocab(), doc);

  std::unordered_map<int, double> type_score;
  for (const auto& [j, cnt] : x) {
    double grad_sum = 0.0;
    for (int s = 0; s < steps; ++s) grad_sum += wrow[j];  // constant along the path
    type_score[j] = cnt * (grad_sum / steps);
  }
  std::unordered_map<int, double> occurrences;
  for (const auto& [j, cnt] : x) occurrences[j] = cnt;

  Attribution attr;
  attr.scores.reserve(doc.size());
  for (const auto& tok : doc.tokens) {
    const int j = clf.vocab().lookup(tok);
    attr.scores.push_back(j >= 0 ? type_score[j] / occurrences[j] : 0.0);
  }
  attr.target_label = yhat;
  attr.method = "ig";
  return attr;
}

// Leave-one-out confidence drop.
inline Attribution occlusion_attribution(const Classifier& clf, const Document& doc) {
  const int n = static_cast<int>(doc.size());
  if (n == 0) throw std::invalid_argument("occlusion_attribution: empty document");
  const int yhat = clf.predict(doc);
  const double base = clf.predict_proba(doc)[yhat];
  Attribution attr;
  attr.scores.reserve(n);
  for (int t = 0; t < n; ++t) {
    attr.scores.push_back(base - clf.predict_proba(complement(doc, {t}))[yhat]);
  }
  attr.target_label = yhat;
  attr.method = "occlusion";
  return attr;
}

// Model-free baseline: i.i.d. uniform score per position.
inline Attribution random_attribution(const Document& doc, std::uint64_t seed) {
  if (doc.empty()) throw std::invalid_argument("random_attribution: empty document");
  rng::Stream stream(seed);
  Attribution attr;
  attr.scores.reserve(doc.size());
  for (std::size_t t = 0; t < doc.size(); ++t) attr.scores.push_back(stream.uniform());
  attr.target_label = 0;
  attr.method = "random";
  return attr;
}

// The k highest-scoring positions, ties broken toward the earliest
// position, returned sorted ascending.
inline Explanation top_k(const Attribution& attr, int k, const std::string& doc_id = "") {
  const int n = static_cast<int>(attr.scores.size());
  if (n < 1) throw std::invalid_argument("top_k: empty attribution");
  if (k < 1) throw std::invalid_argument("top_k: k must be >= 1");
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return attr.scores[a] > attr.scores[b]; });
  Explanation expl;
  expl.positions.assign(order.begin(), order.begin() + std::min(k, n));
  std::sort(expl.positions.begin(), expl.positions.end());
  expl.doc_id = doc_id;
  expl.method = attr.method;
  return expl;
}

// k = max(1, ceil(fraction * len)).
inline Explanation top_fraction(const Attribution& attr, double fraction,
                                const std::string& doc_id = "") {
  const int n = static_cast<int>(attr.scores.size());
  if (n < 1) throw std::invalid_argument("top_fraction: empty attribution");
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw std::invalid_argument("top_fraction: fraction must be in (0,1]");
  }
  const int k = std::max(1, static_cast<int>(std::ceil(fraction * n)));
  return top_k(attr, k, doc_id);
}

struct AttributionOptions {
  LimeOptions lime;
  int ig_steps = 16;
};

// Single entry point used by the case-dataset builder and the pipeline.
// The seed matters only for the stochastic methods.
inline Attribution attribute(const Classifier& clf, const Document& doc, SaliencyMethod method,
                             const AttributionOptions& opt, std::uint64_t seed) {
  switch (method) {
    case SaliencyMethod::Lime: return lime_attribution(clf, doc, opt.lime, seed);
    case SaliencyMethod::Gradient: return gradient_attribution(clf, doc);
    case SaliencyMethod::IntegratedGradients: return integrated_gradients(clf, doc, opt.ig_steps);
    case SaliencyMethod::Occlusion: return occlusion_attribution(clf, doc);
    case SaliencyMethod::Random: return random_attribution(doc, seed);
  }
  throw std::logic_error("unreachable");
}

// --- explanation files ---
// One record per line: {"id": ..., "method": ..., "positions": [...], "k": ...}

inline void save_explanations(const std::vector<Explanation>& expls, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_explanations: cannot write '" + path + "'");
  for (const auto& e : expls) {
    nlohmann::json j{{"id", e.doc_id}, {"method", e.method}, {"positions", e.positions}, {"k", e.k()}};
    out << j.dump() << "\n";
  }
}

inline std::vector<Explanation> load_explanations(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_explanations: cannot open '" + path + "'");
  std::vector<Explanation> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error("load_explanations: line " + std::to_string(lineno) + ": " + e.what());
    }
    Explanation expl;
    expl.doc_id = j.at("id").get<std::string>();
    expl.method = j.at("method").get<std::string>();
    expl.positions = j.at("positions").get<std::vector<int>>();
    out.push_back(std::move(expl));
  }
  return out;
}

}  // namespace faithlab
