#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "faithlab/rng.hpp"
#include "faithlab/saliency.hpp"

using namespace faithlab;

namespace {

Document doc(std::vector<std::string> tokens, std::string id = "d") {
  Document d;
  d.id = std::move(id);
  d.tokens = std::move(tokens);
  return d;
}

LabeledCorpus corpus(std::vector<std::pair<std::vector<std::string>, int>> rows, int num_labels) {
  LabeledCorpus c;
  c.num_labels = num_labels;
  int i = 0;
  for (auto& [toks, y] : rows) {
    c.instances.push_back({doc(std::move(toks), "i" + std::to_string(i++)), y});
  }
  return c;
}

// strongly separable two-class corpus
Classifier sentiment_lr() {
  auto c = corpus({{{"good", "fine", "nice"}, 1},
                   {{"good", "nice"}, 1},
                   {{"bad", "poor", "awful"}, 0},
                   {{"bad", "awful"}, 0}},
                  2);
  return Classifier::train_lr(c, 1e-4, 300, 0.5, 0);
}

Classifier sentiment_nb() {
  auto c = corpus({{{"good", "fine", "nice"}, 1},
                   {{"good", "nice"}, 1},
                   {{"bad", "poor", "awful"}, 0},
                   {{"bad", "awful"}, 0}},
                  2);
  return Classifier::train_nb(c, 1.0);
}

// a model whose output ignores the input entirely
Classifier uniform_clf() {
  auto c = corpus({{{"x"}, 0}, {{"x"}, 1}}, 2);
  return Classifier::train_nb(c, 1.0);
}

}  // namespace

TEST_CASE("method names round trip") {
  for (auto m : {SaliencyMethod::Lime, SaliencyMethod::Gradient, SaliencyMethod::IntegratedGradients,
                 SaliencyMethod::Occlusion, SaliencyMethod::Random}) {
    REQUIRE(saliency_method_from_string(to_string(m)) == m);
  }
  REQUIRE_THROWS(saliency_method_from_string("shapley"));
}

TEST_CASE("lime: single-token coefficient carries the model's sign") {
  auto lr = sentiment_lr();
  auto d = doc({"good"});
  auto attr = lime_attribution(lr, d, {}, 11);
  REQUIRE(attr.scores.size() == 1);
  const double with = lr.predict_proba(d).probs[attr.target_label];
  const double without = lr.predict_proba(doc({})).probs[attr.target_label];
  REQUIRE(attr.scores[0] * (with - without) > 0.0);
}

TEST_CASE("lime: constant model gives null attributions") {
  auto clf = uniform_clf();
  auto attr = lime_attribution(clf, doc({"x", "y", "z", "w"}), {}, 3);
  for (double s : attr.scores) REQUIRE(std::abs(s) < 1e-6);
}

TEST_CASE("lime is deterministic given the seed") {
  auto lr = sentiment_lr();
  auto d = doc({"good", "bad", "fine", "poor"});
  auto a = lime_attribution(lr, d, {}, 42);
  auto b = lime_attribution(lr, d, {}, 42);
  REQUIRE(a.scores == b.scores);
  auto c = lime_attribution(lr, d, {}, 43);
  REQUIRE(a.scores != c.scores);
}

TEST_CASE("lime rejects underdetermined sampling budgets") {
  auto lr = sentiment_lr();
  LimeOptions opt;
  opt.n_samples = 3;
  REQUIRE_THROWS_AS(lime_attribution(lr, doc({"good", "bad", "fine"}), opt, 1),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(lime_attribution(lr, doc({}), {}, 1), std::invalid_argument);
}

TEST_CASE("lime finds the single driving token") {
  // classifier driven by one token: 'good' vs everything else neutral
  auto c = corpus({{{"good", "pad1", "pad2"}, 1},
                   {{"good", "pad3"}, 1},
                   {{"pad1", "pad2", "pad3"}, 0},
                   {{"pad2", "pad3"}, 0}},
                  2);
  auto lr = Classifier::train_lr(c, 1e-4, 300, 0.5, 0);
  auto d = doc({"pad1", "good", "pad2", "pad3"});
  int hits = 0;
  const int trials = 100;
  for (int s = 0; s < trials; ++s) {
    auto attr = lime_attribution(lr, d, {}, 1000 + s);
    auto e = top_k(attr, 1, d.id);
    hits += (e.positions == std::vector<int>{1});
  }
  REQUIRE(hits >= 95);
}

TEST_CASE("gradient attribution reads the target-label weights") {
  auto lr = sentiment_lr();
  auto d = doc({"good", "bad", "good"});
  const int yhat = lr.predict(d);
  auto attr = gradient_attribution(lr, d);
  REQUIRE(attr.scores.size() == 3);
  REQUIRE(attr.target_label == yhat);

  // score = per-occurrence weight of the token for yhat
  const double w_good = lr.logit(doc({"good", "good"}), yhat) - lr.logit(doc({"good"}), yhat);
  const double w_bad = lr.logit(doc({"bad", "bad"}), yhat) - lr.logit(doc({"bad"}), yhat);
  REQUIRE(std::abs(attr.scores[0] - w_good) < 1e-12);
  REQUIRE(std::abs(attr.scores[1] - w_bad) < 1e-12);
  REQUIRE(attr.scores[0] == attr.scores[2]);  // repeated token, equal scores
}

TEST_CASE("gradient attribution on an untrained model is all zero; NB is an error") {
  auto c = corpus({{{"a"}, 0}, {{"b"}, 1}}, 2);
  auto zero = Classifier::train_lr(c, 0.0, 0, 0.5, 0);
  auto attr = gradient_attribution(zero, doc({"a", "b"}));
  REQUIRE(attr.scores == std::vector<double>{0.0, 0.0});
  REQUIRE_THROWS_AS(gradient_attribution(sentiment_nb(), doc({"good"})), std::logic_error);
  REQUIRE_THROWS_AS(integrated_gradients(sentiment_nb(), doc({"good"}), 4), std::logic_error);
}

TEST_CASE("integrated gradients equals gradient attribution for linear logits") {
  auto lr = sentiment_lr();
  for (auto toks : {std::vector<std::string>{"good"},
                    std::vector<std::string>{"good", "bad", "good", "poor"},
                    std::vector<std::string>{"fine", "fine", "fine"}}) {
    auto d = doc(toks);
    auto grad = gradient_attribution(lr, d);
    for (int steps : {1, 3, 16, 64}) {
      auto ig = integrated_gradients(lr, d, steps);
      REQUIRE(ig.scores.size() == grad.scores.size());
      for (std::size_t i = 0; i < ig.scores.size(); ++i) {
        REQUIRE(std::abs(ig.scores[i] - grad.scores[i]) < 1e-9);
      }
    }
  }
  REQUIRE_THROWS_AS(integrated_gradients(lr, doc({"good"}), 0), std::invalid_argument);
}

TEST_CASE("integrated gradients satisfies completeness") {
  auto lr = sentiment_lr();
  auto d = doc({"good", "bad", "fine", "fine"});
  const int yhat = lr.predict(d);
  auto ig = integrated_gradients(lr, d, 16);
  double sum = 0.0;
  for (double s : ig.scores) sum += s;
  const double expected = lr.logit(d, yhat) - lr.logit(doc({}), yhat);
  REQUIRE(std::abs(sum - expected) < 1e-9);
}

TEST_CASE("occlusion matches brute-force leave-one-out") {
  auto nb = sentiment_nb();
  auto d = doc({"good", "bad", "fine", "poor", "nice"});
  const int yhat = nb.predict(d);
  auto attr = occlusion_attribution(nb, d);
  const double base = nb.predict_proba(d).probs[yhat];
  for (int t = 0; t < 5; ++t) {
    const double dropped = nb.predict_proba(complement(d, {t})).probs[yhat];
    REQUIRE(attr.scores[t] == base - dropped);
  }

  auto one = doc({"good"});
  auto attr1 = occlusion_attribution(nb, one);
  const int y1 = nb.predict(one);
  REQUIRE(attr1.scores[0] ==
          nb.predict_proba(one).probs[y1] - nb.predict_proba(doc({})).probs[y1]);

  auto flat = occlusion_attribution(uniform_clf(), doc({"x", "y"}));
  REQUIRE(flat.scores == std::vector<double>{0.0, 0.0});
}

TEST_CASE("random attribution is seeded and model-free") {
  auto d = doc(std::vector<std::string>(10, "t"));
  REQUIRE(random_attribution(d, 5).scores == random_attribution(d, 5).scores);

  // over seed pairs, top-1 positions differ with probability ~ (n-1)/n
  int differ = 0;
  const int trials = 10000;
  for (int s = 0; s < trials; ++s) {
    auto a = top_k(random_attribution(d, 2 * s), 1, d.id);
    auto b = top_k(random_attribution(d, 2 * s + 1), 1, d.id);
    differ += (a.positions != b.positions);
  }
  REQUIRE(std::abs(differ / static_cast<double>(trials) - 0.9) < 0.02);
}

TEST_CASE("top_k and top_fraction select and order correctly") {
  Attribution attr;
  attr.scores = {0.1, 0.9, 0.4, 0.9, 0.2};
  attr.method = "manual";

  auto e1 = top_k(attr, 2, "x");
  REQUIRE(e1.positions == std::vector<int>{1, 3});  // tie on 0.9 -> earliest first, sorted output
  REQUIRE(e1.doc_id == "x");
  REQUIRE(e1.k() == 2);

  auto e2 = top_k(attr, 99, "x");
  REQUIRE(e2.positions == std::vector<int>{0, 1, 2, 3, 4});

  Attribution flat;
  flat.scores.assign(10, 1.0);
  REQUIRE(top_fraction(flat, 0.3, "x").positions == std::vector<int>{0, 1, 2});
  REQUIRE(top_fraction(flat, 0.1, "x").k() == 1);

  Attribution five;
  five.scores.assign(5, 0.0);
  REQUIRE(top_fraction(five, 0.5, "x").k() == 3);  // ceil(2.5)

  Attribution tiny;
  tiny.scores.assign(3, 0.0);
  REQUIRE(top_fraction(tiny, 0.01, "x").k() == 1);  // floor of one token
}

TEST_CASE("attribute dispatcher routes to the right method") {
  auto lr = sentiment_lr();
  auto d = doc({"good", "bad", "fine"});
  AttributionOptions opt;
  REQUIRE(attribute(lr, d, SaliencyMethod::Gradient, opt, 1).scores ==
          gradient_attribution(lr, d).scores);
  REQUIRE(attribute(lr, d, SaliencyMethod::Occlusion, opt, 1).scores ==
          occlusion_attribution(lr, d).scores);
  REQUIRE(attribute(lr, d, SaliencyMethod::Random, opt, 9).scores ==
          random_attribution(d, 9).scores);
  REQUIRE(attribute(lr, d, SaliencyMethod::Lime, opt, 9).scores ==
          lime_attribution(lr, d, opt.lime, 9).scores);
  REQUIRE(attribute(lr, d, SaliencyMethod::IntegratedGradients, opt, 1).method == "ig");
}

TEST_CASE("explanations round trip through jsonl") {
  std::vector<Explanation> expls;
  expls.push_back({{0, 2, 5}, "doc-a", "lime"});
  expls.push_back({{1}, "doc-b", "random"});

  const auto dir = std::filesystem::temp_directory_path() / "faithlab_test_saliency";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "expl.jsonl").string();
  save_explanations(expls, path);
  auto back = load_explanations(path);
  REQUIRE(back.size() == 2);
  REQUIRE(back[0].positions == expls[0].positions);
  REQUIRE(back[0].doc_id == "doc-a");
  REQUIRE(back[0].method == "lime");
  REQUIRE(back[1].k() == 1);
  std::filesystem::remove_all(dir);
}
