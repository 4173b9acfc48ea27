#pragma once

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "faithlab/evalx.hpp"
#include "faithlab/meta_attack.hpp"
#include "faithlab/rng.hpp"
#include "faithlab/saliency.hpp"
#include "faithlab/synthetic.hpp"

namespace faithlab {

// Everything a run needs, in one serializable blob. Thread count is a CLI
// concern, deliberately not part of the config: outputs must not depend on
// it.
struct ExperimentConfig {
  // corpus
  std::string corpus_source = "synthetic";  // synthetic | file
  std::string corpus_path;                  // used when source == file
  std::string corpus_format = "jsonl";      // jsonl | csv
  double test_fraction = 0.2;
  SyntheticParams synthetic;

  // model
  // lr is the default because the gradient saliency method needs logits.
  std::string model_kind = "lr";  // nb | lr
  double nb_alpha = 1.0;
  double lr_l2 = 1e-4;
  int lr_epochs = 300;
  double lr_learning_rate = 0.5;

  // saliency
  std::vector<std::string> saliency_methods{"lime", "gradient", "occlusion", "random"};
  double fraction = 0.1;
  LimeOptions lime;
  int ig_steps = 16;

  // meta attack
  std::string meta_mode = "both";  // off | oracle | trained | both
  DetectorOptions detector;

  // evalx
  bool evalx_enabled = true;
  std::vector<int> k_grid{1, 5, 10, 20, 50};
  int masks_per_instance = 10;
  int num_approx = 4;
  int num_eval_seeds = 5;
  double evalx_alpha = 1.0;
  std::string cutoff_rule = "relative";  // relative | absolute

  // run
  std::string output_dir = "out";
  std::uint64_t master_seed = 20240613;

  void validate() const {
    auto expect = [](bool ok, const std::string& what) {
      if (!ok) throw std::invalid_argument("config: " + what);
    };
    expect(corpus_source == "synthetic" || corpus_source == "file", "corpus.source must be synthetic|file");
    expect(corpus_source != "file" || !corpus_path.empty(), "corpus.path required for file source");
    expect(test_fraction > 0.0 && test_fraction < 1.0, "corpus.test_fraction must be in (0,1)");
    expect(model_kind == "nb" || model_kind == "lr", "model.kind must be nb|lr");
    expect(!saliency_methods.empty(), "saliency.methods must be non-empty");
    for (const auto& m : saliency_methods) {
      saliency_method_from_string(m);  // throws on junk
      expect(model_kind == "lr" || (m != "gradient" && m != "ig"),
             "saliency method '" + m + "' needs logits; set model.kind to lr");
    }
    expect(fraction > 0.0 && fraction <= 1.0, "saliency.fraction must be in (0,1]");
    expect(meta_mode == "off" || meta_mode == "oracle" || meta_mode == "trained" || meta_mode == "both",
           "attack.meta_mode must be off|oracle|trained|both");
    expect(detector.momentum >= 0.0 && detector.momentum < 1.0,
           "attack.detector.momentum must be in [0,1)");
    expect(detector.scalar_gain > 0.0, "attack.detector.scalar_gain must be positive");
    expect(!k_grid.empty(), "evalx.k_grid must be non-empty");
    for (std::size_t i = 0; i < k_grid.size(); ++i) {
      expect(k_grid[i] >= 1 && (i == 0 || k_grid[i] > k_grid[i - 1]),
             "evalx.k_grid must be positive and strictly increasing");
    }
    expect(masks_per_instance >= 1, "evalx.masks_per_instance must be >= 1");
    expect(num_approx >= 1, "evalx.num_approx must be >= 1");
    expect(num_eval_seeds >= 2, "evalx.num_eval_seeds must be >= 2");
    expect(cutoff_rule == "relative" || cutoff_rule == "absolute", "evalx.cutoff must be relative|absolute");
    expect(!output_dir.empty(), "output_dir must be non-empty");
  }

  nlohmann::json to_json() const {
    return nlohmann::json{
        {"corpus",
         {{"source", corpus_source},
          {"path", corpus_path},
          {"format", corpus_format},
          {"test_fraction", test_fraction},
          {"synthetic",
           {{"vocab_size", synthetic.vocab_size},
            {"num_classes", synthetic.num_classes},
            {"profile", synthetic.profile},
            {"len_min", synthetic.len_min},
            {"len_max", synthetic.len_max},
            {"n", synthetic.n},
            {"strong_per_class", synthetic.strong_per_class},
            {"strong_odds", synthetic.strong_odds},
            {"medium_per_class", synthetic.medium_per_class},
            {"medium_odds", synthetic.medium_odds}}}}},
        {"model",
         {{"kind", model_kind},
          {"alpha", nb_alpha},
          {"l2", lr_l2},
          {"epochs", lr_epochs},
          {"learning_rate", lr_learning_rate}}},
        {"saliency",
         {{"methods", saliency_methods},
          {"fraction", fraction},
          {"lime",
           {{"n_samples", lime.n_samples},
            {"keep_prob", lime.keep_prob},
            {"kernel_width", lime.kernel_width},
            {"ridge_lambda", lime.ridge_lambda}}},
          {"ig_steps", ig_steps}}},
        {"attack",
         {{"meta_mode", meta_mode},
          {"detector",
           {{"l2", detector.l2},
            {"epochs", detector.epochs},
            {"learning_rate", detector.learning_rate},
            {"momentum", detector.momentum},
            {"scalar_gain", detector.scalar_gain},
            {"heldout_fraction", detector.heldout_fraction}}}}},
        {"evalx",
         {{"enabled", evalx_enabled},
          {"k_grid", k_grid},
          {"masks_per_instance", masks_per_instance},
          {"num_approx", num_approx},
          {"num_eval_seeds", num_eval_seeds},
          {"alpha", evalx_alpha},
          {"cutoff", cutoff_rule}}},
        {"output_dir", output_dir},
        {"master_seed", master_seed}};
  }

  static ExperimentConfig from_json(const nlohmann::json& j) {
    ExperimentConfig c;
    auto get = [](const nlohmann::json& obj, const char* key, auto& field) {
      if (obj.contains(key)) field = obj.at(key).get<std::decay_t<decltype(field)>>();
    };
    if (j.contains("corpus")) {
      const auto& jc = j.at("corpus");
      get(jc, "source", c.corpus_source);
      get(jc, "path", c.corpus_path);
      get(jc, "format", c.corpus_format);
      get(jc, "test_fraction", c.test_fraction);
      if (jc.contains("synthetic")) {
        const auto& js = jc.at("synthetic");
        get(js, "vocab_size", c.synthetic.vocab_size);
        get(js, "num_classes", c.synthetic.num_classes);
        get(js, "profile", c.synthetic.profile);
        get(js, "len_min", c.synthetic.len_min);
        get(js, "len_max", c.synthetic.len_max);
        get(js, "n", c.synthetic.n);
        get(js, "strong_per_class", c.synthetic.strong_per_class);
        get(js, "strong_odds", c.synthetic.strong_odds);
        get(js, "medium_per_class", c.synthetic.medium_per_class);
        get(js, "medium_odds", c.synthetic.medium_odds);
      }
    }
    if (j.contains("model")) {
      const auto& jm = j.at("model");
      get(jm, "kind", c.model_kind);
      get(jm, "alpha", c.nb_alpha);
      get(jm, "l2", c.lr_l2);
      get(jm, "epochs", c.lr_epochs);
      get(jm, "learning_rate", c.lr_learning_rate);
    }
    if (j.contains("saliency")) {
      const auto& js = j.at("saliency");
      get(js, "methods", c.saliency_methods);
      get(js, "fraction", c.fraction);
      if (js.contains("lime")) {
        const auto& jl = js.at("lime");
        get(jl, "n_samples", c.lime.n_samples);
        get(jl, "keep_prob", c.lime.keep_prob);
        get(jl, "kernel_width", c.lime.kernel_width);
        get(jl, "ridge_lambda", c.lime.ridge_lambda);
      }
      get(js, "ig_steps", c.ig_steps);
    }
    if (j.contains("attack")) {
      const auto& ja = j.at("attack");
      get(ja, "meta_mode", c.meta_mode);
      if (ja.contains("detector")) {
        const auto& jd = ja.at("detector");
        get(jd, "l2", c.detector.l2);
        get(jd, "epochs", c.detector.epochs);
        get(jd, "learning_rate", c.detector.learning_rate);
        get(jd, "momentum", c.detector.momentum);
        get(jd, "scalar_gain", c.detector.scalar_gain);
        get(jd, "heldout_fraction", c.detector.heldout_fraction);
      }
    }
    if (j.contains("evalx")) {
      const auto& je = j.at("evalx");
      get(je, "enabled", c.evalx_enabled);
      get(je, "k_grid", c.k_grid);
      get(je, "masks_per_instance", c.masks_per_instance);
      get(je, "num_approx", c.num_approx);
      get(je, "num_eval_seeds", c.num_eval_seeds);
      get(je, "alpha", c.evalx_alpha);
      get(je, "cutoff", c.cutoff_rule);
    }
    get(j, "output_dir", c.output_dir);
    get(j, "master_seed", c.master_seed);
    c.validate();
    return c;
  }

  static ExperimentConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open '" + path + "'");
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error("config: parse error in '" + path + "': " + e.what());
    }
    return from_json(j);
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("config: cannot write '" + path + "'");
    out << to_json().dump(2) << "\n";
  }

  // Stable content hash; names the run directory.
  std::string hash() const {
    const std::uint64_t h = rng::fnv1a(to_json().dump());
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
  }
};

}  // namespace faithlab
