#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "faithlab/corpus.hpp"
#include "faithlab/detail/softmax.hpp"
#include "faithlab/rng.hpp"

namespace faithlab {

// Token -> dense index map built from the training split only. Unknown
// tokens are dropped, never mapped.
class Vocabulary {
 public:
  Vocabulary() = default;

  static Vocabulary build(const LabeledCorpus& train) {
    std::set<std::string> uniq;
    for (const auto& inst : train.instances) {
      uniq.insert(inst.doc.tokens.begin(), inst.doc.tokens.end());
    }
    return Vocabulary(std::vector<std::string>(uniq.begin(), uniq.end()));
  }

  explicit Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    for (std::size_t i = 0; i < tokens_.size(); ++i) index_[tokens_[i]] = static_cast<int>(i);
  }

  int lookup(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? -1 : it->second;
  }

  int size() const { return static_cast<int>(tokens_.size()); }
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

// Raw token counts of a document over the vocabulary, sorted by index.
inline detail::SparseVec count_features(const Vocabulary& vocab, const Document& doc) {
  std::vector<int> idx;
  idx.reserve(doc.size());
  for (const auto& tok : doc.tokens) {
    const int j = vocab.lookup(tok);
    if (j >= 0) idx.push_back(j);
  }
  std::sort(idx.begin(), idx.end());
  detail::SparseVec out;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && idx[j] == idx[i]) ++j;
    out.emplace_back(idx[i], static_cast<double>(j - i));
    i = j;
  }
  return out;
}

// Classifier confidence vector over the label set.
struct ProbDistribution {
  std::vector<double> probs;

  double operator[](int label) const { return probs.at(label); }
  int size() const { return static_cast<int>(probs.size()); }

  // Ties break toward the lowest label index.
  int argmax() const {
    int best = 0;
    for (int i = 1; i < size(); ++i) {
      if (probs[i] > probs[best]) best = i;
    }
    return best;
  }

  void validate() const {
    double sum = 0.0;
    for (double p : probs) {
      if (!(p >= 0.0 && p <= 1.0)) throw std::runtime_error("ProbDistribution: entry outside [0,1]");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw std::runtime_error("ProbDistribution: entries do not sum to 1");
  }
};

enum class ModelKind { NaiveBayes, LogisticRegression };

inline std::string to_string(ModelKind k) {
  return k == ModelKind::NaiveBayes ? "nb" : "lr";
}

// Bag-of-words probabilistic classifier: multinomial naive Bayes with
// Laplace smoothing, or softmax regression on raw counts. Both are immutable
// once trained and safe for concurrent prediction.
class Classifier {
 public:
  Classifier() = default;

  static Classifier train_nb(const LabeledCorpus& train, double alpha) {
    if (!(alpha > 0.0)) throw std::invalid_argument("train_nb: alpha must be > 0");
    Classifier clf;
    clf.kind_ = ModelKind::NaiveBayes;
    clf.init_common(train);
    clf.alpha_ = alpha;
    clf.label_counts_.assign(clf.num_labels_, 0);
    clf.token_counts_.assign(clf.num_labels_, std::vector<std::int64_t>(clf.vocab_.size(), 0));
    for (const auto& inst : train.instances) {
      clf.label_counts_[inst.label] += 1;
      for (const auto& tok : inst.doc.tokens) {
        const int j = clf.vocab_.lookup(tok);
        if (j >= 0) clf.token_counts_[inst.label][j] += 1;
      }
    }
    clf.rebuild_nb_cache();
    return clf;
  }

  static Classifier train_lr(const LabeledCorpus& train, double l2, int epochs,
                             double learning_rate, std::uint64_t seed) {
    if (l2 < 0.0) throw std::invalid_argument("train_lr: l2 must be >= 0");
    if (epochs < 0) throw std::invalid_argument("train_lr: epochs must be >= 0");
    Classifier clf;
    clf.kind_ = ModelKind::LogisticRegression;
    clf.init_common(train);
    clf.l2_ = l2;
    clf.epochs_ = epochs;
    clf.learning_rate_ = learning_rate;
    clf.seed_ = seed;  // reserved for optional shuffling; training is full batch
    std::vector<detail::SparseVec> xs;
    std::vector<int> ys;
    xs.reserve(train.size());
    for (const auto& inst : train.instances) {
      xs.push_back(count_features(clf.vocab_, inst.doc));
      ys.push_back(inst.label);
    }
    clf.lr_ = detail::fit_softmax(xs, ys, clf.num_labels_, clf.vocab_.size(),
                                  {l2, epochs, learning_rate});
    return clf;
  }

  ProbDistribution predict_proba(const Document& doc) const {
    const auto x = count_features(vocab_, doc);
    if (kind_ == ModelKind::NaiveBayes) {
      if (x.empty()) return {priors_};  // no evidence: empty or all-OOV input
      std::vector<double> logpost(num_labels_);
      for (int y = 0; y < num_labels_; ++y) {
        double acc = log_prior_[y];
        for (const auto& [j, v] : x) acc += v * log_cond_[y][j];
        logpost[y] = acc;
      }
      return {detail::softmax(std::move(logpost))};
    }
    return {lr_.proba(x)};
  }

  int predict(const Document& doc) const { return predict_proba(doc).argmax(); }

  // Pre-softmax score of a label; logistic-regression models only.
  double logit(const Document& doc, int label) const {
    if (kind_ != ModelKind::LogisticRegression) {
      throw std::logic_error("logit: not a logistic-regression model (use log_posterior)");
    }
    const auto x = count_features(vocab_, doc);
    double acc = lr_.bias.at(label);
    const double* row = lr_.weights.data() + static_cast<std::size_t>(label) * lr_.dim;
    for (const auto& [j, v] : x) acc += row[j] * v;
    return acc;
  }

  // Log of the normalized posterior; the naive-Bayes analogue of logit.
  double log_posterior(const Document& doc, int label) const {
    if (kind_ != ModelKind::NaiveBayes) {
      throw std::logic_error("log_posterior: not a naive-Bayes model (use logit)");
    }
    return std::log(predict_proba(doc)[label]);
  }

  ModelKind kind() const { return kind_; }
  int num_labels() const { return num_labels_; }
  const Vocabulary& vocab() const { return vocab_; }
  const detail::SoftmaxModel& lr_model() const {
    if (kind_ != ModelKind::LogisticRegression) throw std::logic_error("lr_model: not an LR model");
    return lr_;
  }
  double nb_alpha() const { return alpha_; }

  nlohmann::json to_json() const {
    nlohmann::json j{{"format", "faithlab.model.v1"},
                     {"kind", to_string(kind_)},
                     {"num_labels", num_labels_},
                     {"vocabulary", vocab_.tokens()},
                     {"seed", seed_}};
    if (kind_ == ModelKind::NaiveBayes) {
      j["nb"] = {{"alpha", alpha_},
                 {"label_counts", label_counts_},
                 {"token_counts", token_counts_}};
    } else {
      j["lr"] = {{"l2", l2_},
                 {"epochs", epochs_},
                 {"learning_rate", learning_rate_},
                 {"weights", lr_.weights},
                 {"bias", lr_.bias}};
    }
    return j;
  }

  static Classifier from_json(const nlohmann::json& j) {
    if (!j.contains("format") || j["format"] != "faithlab.model.v1") {
      throw std::runtime_error("model file: missing or unknown format tag");
    }
    Classifier clf;
    clf.num_labels_ = j.at("num_labels").get<int>();
    clf.vocab_ = Vocabulary(j.at("vocabulary").get<std::vector<std::string>>());
    clf.seed_ = j.at("seed").get<std::uint64_t>();
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "nb") {
      clf.kind_ = ModelKind::NaiveBayes;
      clf.alpha_ = j.at("nb").at("alpha").get<double>();
      clf.label_counts_ = j.at("nb").at("label_counts").get<std::vector<std::int64_t>>();
      clf.token_counts_ = j.at("nb").at("token_counts").get<std::vector<std::vector<std::int64_t>>>();
      clf.rebuild_nb_cache();
    } else if (kind == "lr") {
      clf.kind_ = ModelKind::LogisticRegression;
      clf.l2_ = j.at("lr").at("l2").get<double>();
      clf.epochs_ = j.at("lr").at("epochs").get<int>();
      clf.learning_rate_ = j.at("lr").at("learning_rate").get<double>();
      clf.lr_.num_classes = clf.num_labels_;
      clf.lr_.dim = clf.vocab_.size();
      clf.lr_.weights = j.at("lr").at("weights").get<std::vector<double>>();
      clf.lr_.bias = j.at("lr").at("bias").get<std::vector<double>>();
    } else {
      throw std::runtime_error("model file: unknown kind '" + kind + "'");
    }
    return clf;
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("model save: cannot write '" + path + "'");
    out << to_json().dump(2) << "\n";
  }

  static Classifier load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("model load: cannot open '" + path + "'");
    nlohmann::json j;
    in >> j;
    return from_json(j);
  }

  // Content hash identifying the trained parameters; used to pair a case
  // detector with exactly one model.
  std::string fingerprint() const {
    const std::uint64_t h = rng::fnv1a(to_json().dump());
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
  }

 private:
  void init_common(const LabeledCorpus& train) {
    if (train.empty()) throw std::invalid_argument("train: corpus is empty");
    num_labels_ = train.num_labels;
    std::vector<int> counts(num_labels_, 0);
    for (const auto& inst : train.instances) counts.at(inst.label) += 1;
    for (int y = 0; y < num_labels_; ++y) {
      if (counts[y] == 0) {
        throw std::invalid_argument("train: label " + std::to_string(y) + " has zero instances");
      }
    }
    vocab_ = Vocabulary::build(train);
  }

  void rebuild_nb_cache() {
    const int V = vocab_.size();
    std::int64_t n = 0;
    for (auto c : label_counts_) n += c;
    priors_.assign(num_labels_, 0.0);
    log_prior_.assign(num_labels_, 0.0);
    log_cond_.assign(num_labels_, std::vector<double>(V, 0.0));
    for (int y = 0; y < num_labels_; ++y) {
      priors_[y] = static_cast<double>(label_counts_[y]) / static_cast<double>(n);
      log_prior_[y] = std::log(priors_[y]);
      std::int64_t total = 0;
      for (auto c : token_counts_[y]) total += c;
      const double denom = static_cast<double>(total) + alpha_ * V;
      for (int j = 0; j < V; ++j) {
        log_cond_[y][j] = std::log((static_cast<double>(token_counts_[y][j]) + alpha_) / denom);
      }
    }
  }

  ModelKind kind_ = ModelKind::NaiveBayes;
  Vocabulary vocab_;
  int num_labels_ = 0;
  std::uint64_t seed_ = 0;

  // NB state
  double alpha_ = 1.0;
  std::vector<std::int64_t> label_counts_;
  std::vector<std::vector<std::int64_t>> token_counts_;
  std::vector<double> priors_, log_prior_;
  std::vector<std::vector<double>> log_cond_;

  // LR state
  double l2_ = 0.0;
  int epochs_ = 0;
  double learning_rate_ = 0.0;
  detail::SoftmaxModel lr_;
};

}  // namespace faithlab
