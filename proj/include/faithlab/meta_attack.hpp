#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "faithlab/corpus.hpp"
#include "faithlab/detail/parallel.hpp"
#include "faithlab/detail/softmax.hpp"
#include "faithlab/eraser.hpp"
#include "faithlab/models.hpp"
#include "faithlab/rng.hpp"
#include "faithlab/saliency.hpp"

namespace faithlab {

// One of the 2|Y|+1 input cases the wrapper distinguishes.
struct CaseLabel {
  enum class Kind { Original, ExplanationOnly, NonExplanation };
  Kind kind = Kind::Original;
  int label = -1;  // the predicted label j; -1 for Original

  bool operator==(const CaseLabel& o) const { return kind == o.kind && label == o.label; }
};

inline std::string to_string(const CaseLabel& c) {
  switch (c.kind) {
    case CaseLabel::Kind::Original: return "original";
    case CaseLabel::Kind::ExplanationOnly: return "expl_" + std::to_string(c.label);
    case CaseLabel::Kind::NonExplanation: return "nonexpl_" + std::to_string(c.label);
  }
  throw std::logic_error("unreachable");
}

inline CaseLabel case_label_from_string(const std::string& s) {
  if (s == "original") return {CaseLabel::Kind::Original, -1};
  if (s.rfind("expl_", 0) == 0) return {CaseLabel::Kind::ExplanationOnly, std::stoi(s.substr(5))};
  if (s.rfind("nonexpl_", 0) == 0) return {CaseLabel::Kind::NonExplanation, std::stoi(s.substr(8))};
  throw std::invalid_argument("unknown case label '" + s + "'");
}

// Dense index order: original, expl_0..expl_{Y-1}, nonexpl_0..nonexpl_{Y-1}.
inline int case_index(const CaseLabel& c, int num_labels) {
  switch (c.kind) {
    case CaseLabel::Kind::Original: return 0;
    case CaseLabel::Kind::ExplanationOnly: return 1 + c.label;
    case CaseLabel::Kind::NonExplanation: return 1 + num_labels + c.label;
  }
  throw std::logic_error("unreachable");
}

inline std::vector<std::string> case_label_names(int num_labels) {
  std::vector<std::string> names{"original"};
  for (int j = 0; j < num_labels; ++j) names.push_back("expl_" + std::to_string(j));
  for (int j = 0; j < num_labels; ++j) names.push_back("nonexpl_" + std::to_string(j));
  return names;
}

// Case-labeled corpus: three variants per source training doc.
struct CaseDataset {
  LabeledCorpus corpus;                  // labels are case indices
  std::vector<std::string> label_names;  // case index -> string
  std::string model_fingerprint;
  std::string method_id;
};

// For every training doc x with prediction yhat and explanation e:
// (x, original), (extract(x,e), expl_yhat), (complement(x,e), nonexpl_yhat).
// Case labels use the model's PREDICTED label; the deployed wrapper never
// sees gold labels.
inline CaseDataset build_case_dataset(const Classifier& base, SaliencyMethod method,
                                      const AttributionOptions& opt, const LabeledCorpus& train,
                                      double fraction, std::uint64_t seed, int threads = 1) {
  const int num_cases = 2 * base.num_labels() + 1;
  CaseDataset ds;
  ds.label_names = case_label_names(base.num_labels());
  ds.model_fingerprint = base.fingerprint();
  ds.method_id = to_string(method);
  ds.corpus.num_labels = num_cases;
  ds.corpus.split_tag = "train";
  ds.corpus.label_names = ds.label_names;
  ds.corpus.instances.resize(train.size() * 3);
  detail::parallel_for(train.size(), threads, [&](std::size_t i) {
    const Document& x = train.instances[i].doc;
    const int yhat = base.predict(x);
    const auto attr = attribute(base, x, method, opt, rng::derive_seed(seed, "case:" + x.id));
    const auto expl = top_fraction(attr, fraction, x.id);
    Document eo = extract(x, expl.positions);
    Document ne = complement(x, expl.positions);
    eo.id = x.id + "#expl";
    ne.id = x.id + "#nonexpl";
    Document orig = x;
    orig.id = x.id + "#orig";
    ds.corpus.instances[3 * i + 0] = {std::move(orig), 0};
    ds.corpus.instances[3 * i + 1] = {std::move(eo),
                                      case_index({CaseLabel::Kind::ExplanationOnly, yhat}, base.num_labels())};
    ds.corpus.instances[3 * i + 2] = {std::move(ne),
                                      case_index({CaseLabel::Kind::NonExplanation, yhat}, base.num_labels())};
  });
  return ds;
}

struct DetectorOptions {
  double l2 = 1e-4;
  int epochs = 600;
  double learning_rate = 1.0;
  double momentum = 0.9;
  double scalar_gain = 8.0;  // amplifies the two length cues against the count block
  double heldout_fraction = 0.2;
  std::uint64_t seed = 0;
};

// Length-aware linear case detector: logistic regression over bag-of-words
// counts plus two scalar cues (token count, length / corpus-median length).
// The scalars are standardized with statistics frozen at training time.
class CaseDetector {
 public:
  CaseDetector() = default;

  static CaseDetector train(const CaseDataset& ds, const DetectorOptions& opt) {
    if (ds.corpus.empty()) throw std::invalid_argument("train_case_detector: empty case corpus");
    std::vector<int> counts(ds.corpus.num_labels, 0);
    for (const auto& inst : ds.corpus.instances) counts.at(inst.label) += 1;
    for (int c = 0; c < ds.corpus.num_labels; ++c) {
      if (counts[c] == 0) {
        std::cerr << "warning: case label '" << ds.label_names.at(c)
                  << "' has no instances; keeping the full case alphabet\n";
      }
    }

    CaseDetector det;
    det.case_names_ = ds.label_names;
    det.model_fingerprint_ = ds.model_fingerprint;
    det.method_id_ = ds.method_id;
    det.vocab_ = Vocabulary::build(ds.corpus);

    auto [fit_part, held_part] = split(ds.corpus, opt.heldout_fraction, opt.seed);

    std::vector<double> lens;
    lens.reserve(fit_part.size());
    for (const auto& inst : fit_part.instances) lens.push_back(static_cast<double>(inst.doc.size()));
    {
      auto sorted = lens;
      std::sort(sorted.begin(), sorted.end());
      const std::size_t m = sorted.size();
      det.median_len_ = m % 2 ? sorted[m / 2] : 0.5 * (sorted[m / 2 - 1] + sorted[m / 2]);
      if (det.median_len_ <= 0.0) det.median_len_ = 1.0;
    }
    double s1 = 0.0, s2 = 0.0;
    for (double L : lens) {
      s1 += L;
      s2 += L * L;
    }
    const double n = static_cast<double>(lens.size());
    det.len_mean_ = s1 / n;
    det.len_std_ = std::sqrt(std::max(s2 / n - det.len_mean_ * det.len_mean_, 1e-12));
    det.scalar_gain_ = opt.scalar_gain;

    std::vector<detail::SparseVec> xs;
    std::vector<int> ys;
    xs.reserve(fit_part.size());
    for (const auto& inst : fit_part.instances) {
      xs.push_back(det.features(inst.doc));
      ys.push_back(inst.label);
    }
    det.model_ = detail::fit_softmax(xs, ys, ds.corpus.num_labels, det.vocab_.size() + 2,
                                     {opt.l2, opt.epochs, opt.learning_rate, opt.momentum});

    int hits = 0;
    for (const auto& inst : held_part.instances) {
      if (det.predict_index(inst.doc) == inst.label) ++hits;
    }
    det.heldout_accuracy_ = static_cast<double>(hits) / static_cast<double>(held_part.size());
    return det;
  }

  int predict_index(const Document& doc) const {
    const auto p = model_.proba(features(doc));
    int best = 0;
    for (std::size_t i = 1; i < p.size(); ++i) {
      if (p[i] > p[best]) best = static_cast<int>(i);
    }
    return best;
  }

  CaseLabel predict_case(const Document& doc) const {
    return case_label_from_string(case_names_.at(predict_index(doc)));
  }

  double heldout_accuracy() const { return heldout_accuracy_; }
  const std::string& model_fingerprint() const { return model_fingerprint_; }
  const std::string& method_id() const { return method_id_; }
  int num_cases() const { return model_.num_classes; }

  nlohmann::json to_json() const {
    return nlohmann::json{{"format", "faithlab.detector.v1"},
                          {"case_names", case_names_},
                          {"model_fingerprint", model_fingerprint_},
                          {"method_id", method_id_},
                          {"vocabulary", vocab_.tokens()},
                          {"median_len", median_len_},
                          {"len_mean", len_mean_},
                          {"len_std", len_std_},
                          {"scalar_gain", scalar_gain_},
                          {"heldout_accuracy", heldout_accuracy_},
                          {"weights", model_.weights},
                          {"bias", model_.bias}};
  }

  static CaseDetector from_json(const nlohmann::json& j) {
    if (!j.contains("format") || j["format"] != "faithlab.detector.v1") {
      throw std::runtime_error("detector file: missing or unknown format tag");
    }
    CaseDetector det;
    det.case_names_ = j.at("case_names").get<std::vector<std::string>>();
    det.model_fingerprint_ = j.at("model_fingerprint").get<std::string>();
    det.method_id_ = j.at("method_id").get<std::string>();
    det.vocab_ = Vocabulary(j.at("vocabulary").get<std::vector<std::string>>());
    det.median_len_ = j.at("median_len").get<double>();
    det.len_mean_ = j.at("len_mean").get<double>();
    det.len_std_ = j.at("len_std").get<double>();
    det.scalar_gain_ = j.at("scalar_gain").get<double>();
    det.heldout_accuracy_ = j.at("heldout_accuracy").get<double>();
    det.model_.num_classes = static_cast<int>(det.case_names_.size());
    det.model_.dim = det.vocab_.size() + 2;
    det.model_.weights = j.at("weights").get<std::vector<double>>();
    det.model_.bias = j.at("bias").get<std::vector<double>>();
    return det;
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("detector save: cannot write '" + path + "'");
    out << to_json().dump(2) << "\n";
  }

  static CaseDetector load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("detector load: cannot open '" + path + "'");
    nlohmann::json j;
    in >> j;
    return from_json(j);
  }

 private:
  // The length cues carry most of the signal but live on a tight margin
  // (adjacent case families differ by a couple of tokens), so both scalars get
  // a gain after centering. That scales their gradient, letting the optimizer
  // saturate the length direction before the sparse count weights converge.
  detail::SparseVec features(const Document& doc) const {
    auto x = count_features(vocab_, doc);
    const double len = static_cast<double>(doc.size());
    x.emplace_back(vocab_.size(), scalar_gain_ * (len - len_mean_) / len_std_);
    x.emplace_back(vocab_.size() + 1, scalar_gain_ * (len / median_len_ - 1.0));
    return x;
  }

  detail::SoftmaxModel model_;
  Vocabulary vocab_;
  std::vector<std::string> case_names_;
  std::string model_fingerprint_;
  std::string method_id_;
  double median_len_ = 1.0;
  double len_mean_ = 0.0;
  double len_std_ = 1.0;
  double scalar_gain_ = 1.0;
  double heldout_accuracy_ = 0.0;
};

// Tags a document with its true case by content. Built from the evaluation
// corpus and its explanations; used to show the wrapper's ceiling without a
// trained detector in the loop.
class OracleTagger {
 public:
  OracleTagger() = default;

  static OracleTagger build(const Classifier& base, const LabeledCorpus& corpus,
                            const std::vector<Explanation>& explanations) {
    std::unordered_map<std::string, const Explanation*> by_id;
    for (const auto& e : explanations) by_id[e.doc_id] = &e;
    OracleTagger tagger;
    for (const auto& inst : corpus.instances) {
      auto it = by_id.find(inst.doc.id);
      if (it == by_id.end()) {
        throw std::runtime_error("oracle tagger: no explanation for instance '" + inst.doc.id + "'");
      }
      const int yhat = base.predict(inst.doc);
      tagger.insert(inst.doc, {CaseLabel::Kind::Original, -1});
      tagger.insert(extract(inst.doc, it->second->positions), {CaseLabel::Kind::ExplanationOnly, yhat});
      tagger.insert(complement(inst.doc, it->second->positions), {CaseLabel::Kind::NonExplanation, yhat});
    }
    return tagger;
  }

  CaseLabel tag(const Document& doc) const {
    auto it = tags_.find(key(doc));
    if (it == tags_.end()) throw std::runtime_error("oracle tagger: unknown document content");
    return it->second;
  }

 private:
  static std::string key(const Document& doc) {
    std::string k;
    for (const auto& t : doc.tokens) {
      k += t;
      k += '\x1f';
    }
    return k;
  }

  void insert(const Document& doc, CaseLabel c) {
    auto [it, fresh] = tags_.emplace(key(doc), c);
    if (!fresh && !(it->second == c)) {
      throw std::runtime_error("oracle tagger: conflicting case tags for identical content");
    }
  }

  std::unordered_map<std::string, CaseLabel> tags_;
};

// The meta-algorithm. Original inputs pass straight through to the base
// model; detected explanation-only inputs get confidence 1 on the detected
// label; detected non-explanation inputs get confidence 0 on it and 1 on a
// random other label. The random draw is keyed by document id, not call
// order, so parallel evaluation stays deterministic.
class WrappedClassifier {
 public:
  WrappedClassifier(std::shared_ptr<const Classifier> base, std::shared_ptr<const CaseDetector> detector,
                    std::uint64_t flip_seed)
      : base_(std::move(base)), detector_(std::move(detector)), flip_seed_(flip_seed) {
    if (detector_ && detector_->model_fingerprint() != base_->fingerprint()) {
      throw std::invalid_argument("wrapped classifier: detector was trained for a different base model");
    }
  }

  WrappedClassifier(std::shared_ptr<const Classifier> base, OracleTagger oracle, std::uint64_t flip_seed)
      : base_(std::move(base)), oracle_(std::move(oracle)), has_oracle_(true), flip_seed_(flip_seed) {}

  ProbDistribution predict_proba(const Document& doc) const {
    const CaseLabel c = has_oracle_ ? oracle_.tag(doc) : detector_->predict_case(doc);
    switch (c.kind) {
      case CaseLabel::Kind::Original:
        return base_->predict_proba(doc);
      case CaseLabel::Kind::ExplanationOnly: {
        std::vector<double> p(base_->num_labels(), 0.0);
        p[c.label] = 1.0;
        return {std::move(p)};
      }
      case CaseLabel::Kind::NonExplanation: {
        std::vector<double> p(base_->num_labels(), 0.0);
        rng::Stream stream(rng::derive_seed(flip_seed_, "flip:" + doc.id));
        std::uint64_t pick = stream.index(static_cast<std::uint64_t>(base_->num_labels() - 1));
        const int other = pick < static_cast<std::uint64_t>(c.label) ? static_cast<int>(pick)
                                                                     : static_cast<int>(pick) + 1;
        p[other] = 1.0;
        return {std::move(p)};
      }
    }
    throw std::logic_error("unreachable");
  }

  int predict(const Document& doc) const { return predict_proba(doc).argmax(); }

  ConfidenceFn confidence_fn() const {
    return [this](const Document& doc) { return predict_proba(doc); };
  }

  const Classifier& base() const { return *base_; }
  bool uses_oracle() const { return has_oracle_; }
  const CaseDetector* detector() const { return detector_.get(); }

 private:
  std::shared_ptr<const Classifier> base_;
  std::shared_ptr<const CaseDetector> detector_;
  OracleTagger oracle_;
  bool has_oracle_ = false;
  std::uint64_t flip_seed_ = 0;
};

// Base and wrapped scores over the SAME predictions and explanations, plus
// the count of original-input predictions the wrapper changed.
struct AttackReport {
  FaithfulnessReport base_report;
  FaithfulnessReport wrapped_report;
  double detector_accuracy = 1.0;  // held-out case accuracy; 1.0 under the oracle
  int flip_count = 0;
  std::string method;
};

inline AttackReport attack_report(const Classifier& base, const WrappedClassifier& wrap,
                                  const LabeledCorpus& test, const std::vector<Explanation>& explanations,
                                  int threads = 1) {
  if (!wrap.uses_oracle()) {
    const auto* det = wrap.detector();
    if (det->model_fingerprint() != base.fingerprint()) {
      throw std::invalid_argument("attack_report: detector/model fingerprint mismatch");
    }
    if (!explanations.empty() && det->method_id() != explanations.front().method) {
      throw std::invalid_argument("attack_report: detector was trained for method '" + det->method_id() +
                                  "', explanations use '" + explanations.front().method + "'");
    }
  }
  AttackReport rep;
  rep.base_report = evaluate_faithfulness(as_confidence_fn(base), test, explanations, threads);
  rep.wrapped_report = evaluate_faithfulness(wrap.confidence_fn(), test, explanations, threads);
  rep.detector_accuracy = wrap.uses_oracle() ? 1.0 : wrap.detector()->heldout_accuracy();
  std::vector<int> flips(test.size(), 0);
  detail::parallel_for(test.size(), threads, [&](std::size_t i) {
    const auto& doc = test.instances[i].doc;
    flips[i] = wrap.predict(doc) != base.predict(doc) ? 1 : 0;
  });
  for (int f : flips) rep.flip_count += f;
  rep.method = explanations.empty() ? "" : explanations.front().method;
  return rep;
}

}  // namespace faithlab
