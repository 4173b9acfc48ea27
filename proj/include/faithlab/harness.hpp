#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "faithlab/config.hpp"
#include "faithlab/corpus.hpp"
#include "faithlab/detail/parallel.hpp"
#include "faithlab/eraser.hpp"
#include "faithlab/evalx.hpp"
#include "faithlab/meta_attack.hpp"
#include "faithlab/models.hpp"
#include "faithlab/rng.hpp"
#include "faithlab/saliency.hpp"
#include "faithlab/synthetic.hpp"

namespace faithlab {

inline constexpr const char* kVersion = "1.0.0";

// On-disk layout of one run directory (named by the config hash).
struct RunPaths {
  std::filesystem::path dir;

  std::filesystem::path manifest() const { return dir / "manifest.json"; }
  std::filesystem::path train_corpus() const { return dir / "corpus_train.jsonl"; }
  std::filesystem::path test_corpus() const { return dir / "corpus_test.jsonl"; }
  std::filesystem::path model() const { return dir / "model.json"; }
  std::filesystem::path explanations(const std::string& m) const {
    return dir / ("explanations_" + m + ".jsonl");
  }
  std::filesystem::path case_dataset(const std::string& m) const { return dir / ("cases_" + m + ".jsonl"); }
  std::filesystem::path detector(const std::string& m) const { return dir / ("detector_" + m + ".json"); }
  std::filesystem::path eraser_detail() const { return dir / "eraser_detail.json"; }
  std::filesystem::path attack_detail() const { return dir / "attack_detail.json"; }
  std::filesystem::path confidence_summary() const { return dir / "confidence_summary.json"; }
  std::filesystem::path evaluator(const std::string& name) const {
    return dir / ("evaluator_" + name + ".json");
  }
  std::filesystem::path evalx_detail() const { return dir / "evalx_detail.json"; }
  std::filesystem::path table1() const { return dir / "table1.csv"; }
  std::filesystem::path table2() const { return dir / "table2.csv"; }
  std::filesystem::path table3() const { return dir / "table3.csv"; }
  std::filesystem::path table4() const { return dir / "table4.csv"; }
  std::filesystem::path table5() const { return dir / "table5.csv"; }
  std::filesystem::path fig4() const { return dir / "fig4.csv"; }
};

inline RunPaths run_paths(const ExperimentConfig& cfg) {
  return {std::filesystem::path(cfg.output_dir) / ("run-" + cfg.hash())};
}

namespace detail_harness {

inline void require_file(const std::filesystem::path& p, const std::string& producer) {
  if (!std::filesystem::exists(p)) {
    throw std::runtime_error("missing artifact '" + p.string() + "' (run '" + producer + "' first)");
  }
}

inline std::string fmt6(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6f", x);
  return buf;
}

inline double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

// "mean±std" cell for seed-varying columns.
inline std::string pm_cell(const std::vector<double>& v) {
  return fmt6(mean_of(v)) + "±" + fmt6(sample_std(v));
}

inline nlohmann::json report_to_json(const FaithfulnessReport& r) {
  nlohmann::json inst = nlohmann::json::array();
  for (const auto& rec : r.instances) {
    inst.push_back({{"id", rec.id},
                    {"predicted", rec.predicted},
                    {"c", rec.c},
                    {"suff", rec.suff},
                    {"comp", rec.comp}});
  }
  return {{"f1", r.macro_f1},
          {"mean_suff", r.mean_suff},
          {"mean_comp", r.mean_comp},
          {"mean_comp_plus_suff", r.mean_comp_plus_suff},
          {"method", r.method},
          {"instances", std::move(inst)}};
}

inline nlohmann::json load_json(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("cannot open '" + p.string() + "'");
  nlohmann::json j;
  in >> j;
  return j;
}

inline void write_json(const std::filesystem::path& p, const nlohmann::json& j) {
  std::ofstream out(p);
  if (!out) throw std::runtime_error("cannot write '" + p.string() + "'");
  out << j.dump(2) << "\n";
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p);
  if (!out) throw std::runtime_error("cannot write '" + p.string() + "'");
  out << text;
}

inline std::vector<Explanation> load_method_explanations(const RunPaths& paths, const std::string& m) {
  require_file(paths.explanations(m), "explain");
  return load_explanations(paths.explanations(m).string());
}

inline AttributionOptions attribution_options(const ExperimentConfig& cfg) {
  AttributionOptions opt;
  opt.lime = cfg.lime;
  opt.ig_steps = cfg.ig_steps;
  return opt;
}

}  // namespace detail_harness

// --- pipeline steps ---
// Each step reads its inputs from the run directory and writes its outputs
// there, so the CLI can run them individually.

inline void step_gen_data(const ExperimentConfig& cfg, const RunPaths& paths) {
  LabeledCorpus corpus;
  if (cfg.corpus_source == "synthetic") {
    corpus = generate_synthetic_corpus(cfg.synthetic, rng::derive_seed(cfg.master_seed, "corpus"));
  } else {
    corpus = load_corpus(cfg.corpus_path, cfg.corpus_format);
  }
  auto [train, test] = split(corpus, cfg.test_fraction, rng::derive_seed(cfg.master_seed, "split"));
  save_corpus(train, paths.train_corpus().string());
  save_corpus(test, paths.test_corpus().string());
}

inline void step_train(const ExperimentConfig& cfg, const RunPaths& paths) {
  detail_harness::require_file(paths.train_corpus(), "gen-data");
  const auto train = load_corpus(paths.train_corpus().string(), "jsonl");
  Classifier model = cfg.model_kind == "nb"
                         ? Classifier::train_nb(train, cfg.nb_alpha)
                         : Classifier::train_lr(train, cfg.lr_l2, cfg.lr_epochs, cfg.lr_learning_rate,
                                                rng::derive_seed(cfg.master_seed, "model"));
  model.save(paths.model().string());
}

inline void step_explain(const ExperimentConfig& cfg, const RunPaths& paths, int threads) {
  detail_harness::require_file(paths.model(), "train");
  detail_harness::require_file(paths.test_corpus(), "gen-data");
  const auto model = Classifier::load(paths.model().string());
  const auto test = load_corpus(paths.test_corpus().string(), "jsonl");
  const auto opt = detail_harness::attribution_options(cfg);
  for (const auto& m : cfg.saliency_methods) {
    const SaliencyMethod method = saliency_method_from_string(m);
    const std::uint64_t step_seed = rng::derive_seed(cfg.master_seed, "explain:" + m);
    std::vector<Explanation> expls(test.size());
    detail::parallel_for(test.size(), threads, [&](std::size_t i) {
      const Document& doc = test.instances[i].doc;
      const auto attr = attribute(model, doc, method, opt, rng::derive_seed(step_seed, "doc:" + doc.id));
      expls[i] = top_fraction(attr, cfg.fraction, doc.id);
    });
    save_explanations(expls, paths.explanations(m).string());
  }
}

inline void step_eval_eraser(const ExperimentConfig& cfg, const RunPaths& paths, int threads) {
  detail_harness::require_file(paths.model(), "train");
  detail_harness::require_file(paths.test_corpus(), "gen-data");
  const auto model = Classifier::load(paths.model().string());
  const auto test = load_corpus(paths.test_corpus().string(), "jsonl");
  nlohmann::json detail{{"format", "faithlab.eraser.v1"},
                        {"model_fingerprint", model.fingerprint()},
                        {"methods", nlohmann::json::object()}};
  for (const auto& m : cfg.saliency_methods) {
    const auto expls = detail_harness::load_method_explanations(paths, m);
    const auto report = evaluate_faithfulness(as_confidence_fn(model), test, expls, threads);
    detail["methods"][m] = detail_harness::report_to_json(report);
  }
  detail_harness::write_json(paths.eraser_detail(), detail);
}

namespace detail_harness {

// Mean confidence the base and wrapped models put on the base prediction
// when shown explanation-only and non-explanation inputs.
inline nlohmann::json confidence_block(const Classifier& model, const WrappedClassifier& wrap,
                                       const LabeledCorpus& test, const std::vector<Explanation>& expls,
                                       int threads) {
  std::unordered_map<std::string, const Explanation*> by_id;
  for (const auto& e : expls) by_id[e.doc_id] = &e;
  const std::size_t n = test.size();
  std::vector<double> be(n), bn(n), we(n), wn(n);
  detail::parallel_for(n, threads, [&](std::size_t i) {
    const Document& doc = test.instances[i].doc;
    const auto* e = by_id.at(doc.id);
    const int yhat = model.predict(doc);
    const Document eo = extract(doc, e->positions);
    const Document ne = complement(doc, e->positions);
    be[i] = model.predict_proba(eo)[yhat];
    bn[i] = model.predict_proba(ne)[yhat];
    we[i] = wrap.predict_proba(eo)[yhat];
    wn[i] = wrap.predict_proba(ne)[yhat];
  });
  return {{"base_expl_only", mean_of(be)},
          {"base_non_expl", mean_of(bn)},
          {"wrapped_expl_only", mean_of(we)},
          {"wrapped_non_expl", mean_of(wn)}};
}

inline nlohmann::json attack_block(const Classifier& model, const WrappedClassifier& wrap,
                                   const LabeledCorpus& test, const std::vector<Explanation>& expls,
                                   int threads) {
  const auto rep = attack_report(model, wrap, test, expls, threads);
  return {{"detector_accuracy", rep.detector_accuracy},
          {"flip_count", rep.flip_count},
          {"wrapped", report_to_json(rep.wrapped_report)}};
}

}  // namespace detail_harness

inline void step_attack_eraser(const ExperimentConfig& cfg, const RunPaths& paths, int threads) {
  nlohmann::json detail{{"format", "faithlab.attack.v1"}, {"modes", nlohmann::json::object()}};
  nlohmann::json confidence{{"format", "faithlab.confidence.v1"}, {"modes", nlohmann::json::object()}};
  if (cfg.meta_mode == "off") {
    detail_harness::write_json(paths.attack_detail(), detail);
    detail_harness::write_json(paths.confidence_summary(), confidence);
    return;
  }
  detail_harness::require_file(paths.model(), "train");
  detail_harness::require_file(paths.train_corpus(), "gen-data");
  detail_harness::require_file(paths.test_corpus(), "gen-data");
  const auto base = std::make_shared<const Classifier>(Classifier::load(paths.model().string()));
  const auto train = load_corpus(paths.train_corpus().string(), "jsonl");
  const auto test = load_corpus(paths.test_corpus().string(), "jsonl");
  const std::uint64_t flip_seed = rng::derive_seed(cfg.master_seed, "flip");
  const bool do_oracle = cfg.meta_mode == "oracle" || cfg.meta_mode == "both";
  const bool do_trained = cfg.meta_mode == "trained" || cfg.meta_mode == "both";

  if (do_oracle) {
    detail["modes"]["oracle"] = nlohmann::json::object();
    confidence["modes"]["oracle"] = nlohmann::json::object();
    for (const auto& m : cfg.saliency_methods) {
      const auto expls = detail_harness::load_method_explanations(paths, m);
      WrappedClassifier wrap(base, OracleTagger::build(*base, test, expls), flip_seed);
      detail["modes"]["oracle"][m] = detail_harness::attack_block(*base, wrap, test, expls, threads);
      confidence["modes"]["oracle"][m] =
          detail_harness::confidence_block(*base, wrap, test, expls, threads);
    }
  }
  if (do_trained) {
    detail["modes"]["trained"] = nlohmann::json::object();
    confidence["modes"]["trained"] = nlohmann::json::object();
    const auto opt = detail_harness::attribution_options(cfg);
    for (const auto& m : cfg.saliency_methods) {
      const auto expls = detail_harness::load_method_explanations(paths, m);
      const auto cases = build_case_dataset(*base, saliency_method_from_string(m), opt, train,
                                            cfg.fraction, rng::derive_seed(cfg.master_seed, "cases:" + m),
                                            threads);
      save_corpus(cases.corpus, paths.case_dataset(m).string());
      DetectorOptions dopt = cfg.detector;
      dopt.seed = rng::derive_seed(cfg.master_seed, "detector:" + m);
      const auto detector = std::make_shared<const CaseDetector>(CaseDetector::train(cases, dopt));
      detector->save(paths.detector(m).string());
      WrappedClassifier wrap(base, detector, flip_seed);
      detail["modes"]["trained"][m] = detail_harness::attack_block(*base, wrap, test, expls, threads);
      confidence["modes"]["trained"][m] =
          detail_harness::confidence_block(*base, wrap, test, expls, threads);
    }
  }
  detail_harness::write_json(paths.attack_detail(), detail);
  detail_harness::write_json(paths.confidence_summary(), confidence);
}

inline void step_train_evalx(const ExperimentConfig& cfg, const RunPaths& paths) {
  if (!cfg.evalx_enabled) return;
  detail_harness::require_file(paths.train_corpus(), "gen-data");
  const auto train = load_corpus(paths.train_corpus().string(), "jsonl");
  const int M = cfg.masks_per_instance;
  auto save_one = [&](const std::string& name, const std::string& tag) {
    const auto ev = train_evaluator(train, M, rng::derive_seed(cfg.master_seed, tag), cfg.evalx_alpha);
    ev.clf.save(paths.evaluator(name).string());
  };
  save_one("true", "evalx:true");
  for (int i = 0; i < cfg.num_approx; ++i) {
    save_one("approx" + std::to_string(i), "evalx:approx:" + std::to_string(i));
  }
  for (int i = 0; i < cfg.num_eval_seeds; ++i) {
    save_one("seed" + std::to_string(i), "evalx:seed:" + std::to_string(i));
  }
}

inline void step_attack_evalx(const ExperimentConfig& cfg, const RunPaths& paths, int threads) {
  if (!cfg.evalx_enabled) return;
  detail_harness::require_file(paths.model(), "train");
  detail_harness::require_file(paths.train_corpus(), "gen-data");
  detail_harness::require_file(paths.test_corpus(), "gen-data");
  detail_harness::require_file(paths.evaluator("true"), "train-evalx");
  const auto model = Classifier::load(paths.model().string());
  const auto train = load_corpus(paths.train_corpus().string(), "jsonl");
  const auto test = load_corpus(paths.test_corpus().string(), "jsonl");
  const auto ev_true = Classifier::load(paths.evaluator("true").string());
  std::vector<Classifier> approx;
  for (int i = 0; i < cfg.num_approx; ++i) {
    detail_harness::require_file(paths.evaluator("approx" + std::to_string(i)), "train-evalx");
    approx.push_back(Classifier::load(paths.evaluator("approx" + std::to_string(i)).string()));
  }
  std::vector<Classifier> seed_evs;
  for (int i = 0; i < cfg.num_eval_seeds; ++i) {
    detail_harness::require_file(paths.evaluator("seed" + std::to_string(i)), "train-evalx");
    seed_evs.push_back(Classifier::load(paths.evaluator("seed" + std::to_string(i)).string()));
  }

  const double acc = accuracy_on(model, test);
  const double auroc_v = macro_auroc_on(model, test);
  const CutoffRule rule = cfg.cutoff_rule == "relative" ? CutoffRule::Relative : CutoffRule::Absolute;
  const std::size_t n = test.size();
  std::vector<int> yhat(n);
  for (std::size_t i = 0; i < n; ++i) yhat[i] = model.predict(test.instances[i].doc);

  nlohmann::json detail{{"format", "faithlab.evalx.v1"},
                        {"acc", acc},
                        {"auroc", auroc_v},
                        {"cutoff", cfg.cutoff_rule},
                        {"k_grid", cfg.k_grid}};

  auto seed_report = [&](const Classifier& ev, const std::vector<Explanation>& expls) {
    return eval_explanations(ev, expls, test, acc, auroc_v, rule, threads);
  };
  // Fraction of instances where the scoring evaluator maps the explanation
  // back to the encoded (predicted) label.
  auto recovery_by_evaluator = [&](const Classifier& ev, const std::vector<Explanation>& expls) {
    std::vector<int> hit(n);
    detail::parallel_for(n, threads, [&](std::size_t i) {
      const Document sub = extract(test.instances[i].doc, expls[i].positions);
      hit[i] = ev.predict_proba(sub).argmax() == yhat[i] ? 1 : 0;
    });
    int s = 0;
    for (int h : hit) s += h;
    return static_cast<double>(s) / static_cast<double>(n);
  };

  // Method 1: code-book encoding, scored across the seed-varied evaluators.
  const CodeBook cb = CodeBook::build(train, cfg.evalx_alpha);
  nlohmann::json table3 = nlohmann::json::array();
  nlohmann::json fig4 = nlohmann::json::array();
  for (int k : cfg.k_grid) {
    std::vector<Explanation> expls(n);
    detail::parallel_for(n, threads, [&](std::size_t i) {
      expls[i] = encode_likelihood_ratio(model, cb, test.instances[i].doc, k);
    });
    std::vector<int> rec_hit(n);
    detail::parallel_for(n, threads, [&](std::size_t i) {
      const Document sub = extract(test.instances[i].doc, expls[i].positions);
      rec_hit[i] = decode_explanation(cb, sub) == yhat[i] ? 1 : 0;
    });
    int rs = 0;
    for (int h : rec_hit) rs += h;
    const double recovery = static_cast<double>(rs) / static_cast<double>(n);
    std::vector<double> eaccs, eaurocs;
    for (const auto& ev : seed_evs) {
      const auto rep = seed_report(ev, expls);
      eaccs.push_back(rep.eacc);
      eaurocs.push_back(rep.eauroc);
    }
    table3.push_back({{"num_tokens", k},
                      {"label_recovery_rate", recovery},
                      {"fallback_rate", 0.0},
                      {"eacc", eaccs},
                      {"eauroc", eaurocs}});
    const auto rep_true = seed_report(ev_true, expls);
    fig4.push_back(
        {{"method", "method1"}, {"num_tokens", k}, {"eacc", rep_true.eacc}, {"eauroc", rep_true.eauroc}});
  }
  detail["table3"] = table3;

  // Method 2, attacker view: majority vote over the approximation models;
  // the held-out true evaluator does the scoring.
  std::vector<const Classifier*> approx_ptrs;
  for (const auto& a : approx) approx_ptrs.push_back(&a);
  auto method2_rows = [&](const std::vector<const Classifier*>& encoders) {
    std::vector<std::vector<QueryEncoding>> snaps(n);
    detail::parallel_for(n, threads, [&](std::size_t i) {
      snaps[i] = extend_query_snapshots(model, encoders, test.instances[i].doc, cfg.k_grid);
    });
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t g = 0; g < cfg.k_grid.size(); ++g) {
      std::vector<Explanation> expls(n);
      double fallbacks = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        expls[i] = snaps[i][g].expl;
        fallbacks += snaps[i][g].fallback ? 1.0 : 0.0;
      }
      const auto rep = seed_report(ev_true, expls);
      rows.push_back({{"num_tokens", cfg.k_grid[g]},
                      {"label_recovery_rate", recovery_by_evaluator(ev_true, expls)},
                      {"fallback_rate", fallbacks / static_cast<double>(n)},
                      {"eacc", rep.eacc},
                      {"eauroc", rep.eauroc}});
    }
    return rows;
  };

  const auto table4 = method2_rows(approx_ptrs);
  detail["table4"] = table4;
  for (const auto& row : table4) {
    fig4.push_back({{"method", "method2_majority"},
                    {"num_tokens", row.at("num_tokens")},
                    {"eacc", row.at("eacc")},
                    {"eauroc", row.at("eauroc")}});
  }
  detail["fig4"] = fig4;

  // Method 2 with a single approximation, varied across the approximations.
  nlohmann::json table5 = nlohmann::json::array();
  {
    std::vector<nlohmann::json> per_approx;
    for (const auto& a : approx) per_approx.push_back(method2_rows({&a}));
    for (std::size_t g = 0; g < cfg.k_grid.size(); ++g) {
      std::vector<double> eaccs, eaurocs, recs, falls;
      for (const auto& rows : per_approx) {
        eaccs.push_back(rows[g].at("eacc").get<double>());
        eaurocs.push_back(rows[g].at("eauroc").get<double>());
        recs.push_back(rows[g].at("label_recovery_rate").get<double>());
        falls.push_back(rows[g].at("fallback_rate").get<double>());
      }
      table5.push_back({{"num_tokens", cfg.k_grid[g]},
                        {"label_recovery_rate", recs},
                        {"fallback_rate", falls},
                        {"eacc", eaccs},
                        {"eauroc", eaurocs}});
    }
  }
  detail["table5"] = table5;

  // Method 2 with direct access to the true evaluator, single-token case.
  {
    std::vector<QueryEncoding> encs(n);
    detail::parallel_for(n, threads, [&](std::size_t i) {
      encs[i] = encode_by_query(model, {&ev_true}, test.instances[i].doc);
    });
    std::vector<Explanation> expls(n);
    double fallbacks = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      expls[i] = encs[i].expl;
      fallbacks += encs[i].fallback ? 1.0 : 0.0;
    }
    const auto rep = seed_report(ev_true, expls);
    detail["direct_query"] = {{"num_tokens", 1},
                              {"label_recovery_rate", recovery_by_evaluator(ev_true, expls)},
                              {"fallback_rate", fallbacks / static_cast<double>(n)},
                              {"eacc", rep.eacc},
                              {"eauroc", rep.eauroc}};
  }

  detail_harness::write_json(paths.evalx_detail(), detail);
}

// Rebuilds every csv from the persisted detail files; no recomputation.
inline void write_tables(const ExperimentConfig& cfg, const RunPaths& paths) {
  namespace dh = detail_harness;
  dh::require_file(paths.eraser_detail(), "eval-eraser");
  const auto eraser = dh::load_json(paths.eraser_detail());
  nlohmann::json attack;
  if (std::filesystem::exists(paths.attack_detail())) attack = dh::load_json(paths.attack_detail());

  // Faithfulness scoreboard: one base row per method plus the wrapped rows.
  {
    std::string csv = "method,f1,comp,suff,comp_plus_suff,detector_accuracy,flip_count\n";
    auto base_row = [&](const std::string& m, const nlohmann::json& r) {
      csv += m + "," + dh::fmt6(r.at("f1").get<double>()) + "," + dh::fmt6(r.at("mean_comp").get<double>()) +
             "," + dh::fmt6(r.at("mean_suff").get<double>()) + "," +
             dh::fmt6(r.at("mean_comp_plus_suff").get<double>()) + ",,\n";
    };
    auto wrapped_row = [&](const std::string& name, const nlohmann::json& blk) {
      const auto& r = blk.at("wrapped");
      csv += name + "," + dh::fmt6(r.at("f1").get<double>()) + "," + dh::fmt6(r.at("mean_comp").get<double>()) +
             "," + dh::fmt6(r.at("mean_suff").get<double>()) + "," +
             dh::fmt6(r.at("mean_comp_plus_suff").get<double>()) + "," +
             dh::fmt6(blk.at("detector_accuracy").get<double>()) + "," +
             std::to_string(blk.at("flip_count").get<int>()) + "\n";
    };
    for (const auto& m : cfg.saliency_methods) {
      base_row(m, eraser.at("methods").at(m));
      for (const char* mode : {"oracle", "trained"}) {
        if (!attack.is_null() && attack.at("modes").contains(mode) && attack["modes"][mode].contains(m)) {
          wrapped_row(m + std::string("+meta_") + mode, attack["modes"][mode][m]);
        }
      }
    }
    dh::write_text(paths.table1(), csv);
  }

  // Case-detector held-out accuracy per method (trained mode only).
  if (!attack.is_null()) {
    std::string csv = "method,detector_accuracy\n";
    if (attack.at("modes").contains("trained")) {
      for (const auto& m : cfg.saliency_methods) {
        if (attack["modes"]["trained"].contains(m)) {
          csv += m + "," + dh::fmt6(attack["modes"]["trained"][m].at("detector_accuracy").get<double>()) + "\n";
        }
      }
    }
    dh::write_text(paths.table2(), csv);
  }

  if (!std::filesystem::exists(paths.evalx_detail())) return;
  const auto ex = dh::load_json(paths.evalx_detail());
  const double acc = ex.at("acc").get<double>();
  const double auroc_v = ex.at("auroc").get<double>();
  const std::string header = "num_tokens,label_recovery_rate,acc,eacc,auroc,eauroc,fallback_rate\n";

  {
    std::string csv = header;
    for (const auto& row : ex.at("table3")) {
      csv += std::to_string(row.at("num_tokens").get<int>()) + "," +
             dh::fmt6(row.at("label_recovery_rate").get<double>()) + "," + dh::fmt6(acc) + "," +
             dh::pm_cell(row.at("eacc").get<std::vector<double>>()) + "," + dh::fmt6(auroc_v) + "," +
             dh::pm_cell(row.at("eauroc").get<std::vector<double>>()) + "," +
             dh::fmt6(row.at("fallback_rate").get<double>()) + "\n";
    }
    dh::write_text(paths.table3(), csv);
  }
  {
    std::string csv = header;
    for (const auto& row : ex.at("table4")) {
      csv += std::to_string(row.at("num_tokens").get<int>()) + "," +
             dh::fmt6(row.at("label_recovery_rate").get<double>()) + "," + dh::fmt6(acc) + "," +
             dh::fmt6(row.at("eacc").get<double>()) + "," + dh::fmt6(auroc_v) + "," +
             dh::fmt6(row.at("eauroc").get<double>()) + "," + dh::fmt6(row.at("fallback_rate").get<double>()) +
             "\n";
    }
    dh::write_text(paths.table4(), csv);
  }
  {
    std::string csv = header;
    for (const auto& row : ex.at("table5")) {
      csv += std::to_string(row.at("num_tokens").get<int>()) + "," +
             dh::pm_cell(row.at("label_recovery_rate").get<std::vector<double>>()) + "," + dh::fmt6(acc) +
             "," + dh::pm_cell(row.at("eacc").get<std::vector<double>>()) + "," + dh::fmt6(auroc_v) + "," +
             dh::pm_cell(row.at("eauroc").get<std::vector<double>>()) + "," +
             dh::pm_cell(row.at("fallback_rate").get<std::vector<double>>()) + "\n";
    }
    dh::write_text(paths.table5(), csv);
  }
  {
    const bool relative = ex.at("cutoff").get<std::string>() == "relative";
    const double acc_cut = relative ? 0.9 * acc : acc - 0.1;
    const double auroc_cut = relative ? 0.9 * auroc_v : auroc_v - 0.1;
    std::string csv = "method,num_tokens,eacc,eauroc,eacc_cutoff,eauroc_cutoff\n";
    for (const auto& row : ex.at("fig4")) {
      csv += row.at("method").get<std::string>() + "," + std::to_string(row.at("num_tokens").get<int>()) +
             "," + dh::fmt6(row.at("eacc").get<double>()) + "," + dh::fmt6(row.at("eauroc").get<double>()) +
             "," + dh::fmt6(acc_cut) + "," + dh::fmt6(auroc_cut) + "\n";
    }
    dh::write_text(paths.fig4(), csv);
  }
}

// Full pipeline in a fresh run directory. Any step failure removes the
// directory and rethrows with the step named. Returns the manifest.
inline nlohmann::json run(const ExperimentConfig& cfg, int threads = 1) {
  cfg.validate();
  const RunPaths paths = run_paths(cfg);
  std::filesystem::remove_all(paths.dir);
  std::filesystem::create_directories(paths.dir);

  auto guarded = [&](const char* step, auto&& fn) {
    try {
      fn();
    } catch (const std::exception& e) {
      std::filesystem::remove_all(paths.dir);
      throw std::runtime_error(std::string("step '") + step + "' failed: " + e.what());
    }
  };
  guarded("gen-data", [&] { step_gen_data(cfg, paths); });
  guarded("train", [&] { step_train(cfg, paths); });
  guarded("explain", [&] { step_explain(cfg, paths, threads); });
  guarded("eval-eraser", [&] { step_eval_eraser(cfg, paths, threads); });
  guarded("attack-eraser", [&] { step_attack_eraser(cfg, paths, threads); });
  guarded("train-evalx", [&] { step_train_evalx(cfg, paths); });
  guarded("attack-evalx", [&] { step_attack_evalx(cfg, paths, threads); });
  guarded("report", [&] { write_tables(cfg, paths); });

  nlohmann::json seeds{{"corpus", rng::derive_seed(cfg.master_seed, "corpus")},
                       {"split", rng::derive_seed(cfg.master_seed, "split")},
                       {"model", rng::derive_seed(cfg.master_seed, "model")},
                       {"flip", rng::derive_seed(cfg.master_seed, "flip")}};
  for (const auto& m : cfg.saliency_methods) {
    seeds["explain:" + m] = rng::derive_seed(cfg.master_seed, "explain:" + m);
    seeds["cases:" + m] = rng::derive_seed(cfg.master_seed, "cases:" + m);
    seeds["detector:" + m] = rng::derive_seed(cfg.master_seed, "detector:" + m);
  }
  if (cfg.evalx_enabled) {
    seeds["evalx:true"] = rng::derive_seed(cfg.master_seed, "evalx:true");
    for (int i = 0; i < cfg.num_approx; ++i) {
      seeds["evalx:approx:" + std::to_string(i)] =
          rng::derive_seed(cfg.master_seed, "evalx:approx:" + std::to_string(i));
    }
    for (int i = 0; i < cfg.num_eval_seeds; ++i) {
      seeds["evalx:seed:" + std::to_string(i)] =
          rng::derive_seed(cfg.master_seed, "evalx:seed:" + std::to_string(i));
    }
  }
  std::vector<std::string> artifacts;
  for (const auto& entry : std::filesystem::directory_iterator(paths.dir)) {
    artifacts.push_back(entry.path().filename().string());
  }
  std::sort(artifacts.begin(), artifacts.end());

  // Every learned component is fit on the train split only; record that so
  // downstream checks can assert it without re-deriving the data flow.
  nlohmann::json provenance{{"vocabulary", "train"},
                            {"model", "train"},
                            {"case_detector", "train"},
                            {"codebook", "train"},
                            {"evaluator", "train"}};

  nlohmann::json manifest{{"format", "faithlab.manifest.v1"},
                          {"version", kVersion},
                          {"config", cfg.to_json()},
                          {"config_hash", cfg.hash()},
                          {"seeds", seeds},
                          {"provenance", provenance},
                          {"artifacts", artifacts}};
  detail_harness::write_json(paths.manifest(), manifest);
  return manifest;
}

}  // namespace faithlab
