#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "faithlab/harness.hpp"

using namespace faithlab;
namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string first_line(const fs::path& p) {
  std::ifstream in(p);
  std::string line;
  std::getline(in, line);
  return line;
}

int count_lines(const fs::path& p) {
  std::ifstream in(p);
  int n = 0;
  std::string line;
  while (std::getline(in, line)) ++n;
  return n;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

ExperimentConfig small_config(const std::string& out_dir) {
  ExperimentConfig cfg;
  cfg.synthetic.vocab_size = 300;
  cfg.synthetic.strong_per_class = 20;
  cfg.synthetic.medium_per_class = 60;
  cfg.synthetic.n = 160;
  cfg.model_kind = "nb";
  cfg.saliency_methods = {"occlusion", "random"};
  cfg.detector.epochs = 150;
  cfg.k_grid = {1, 3};
  cfg.masks_per_instance = 3;
  cfg.num_approx = 2;
  cfg.num_eval_seeds = 2;
  cfg.output_dir = out_dir;
  cfg.master_seed = 99;
  return cfg;
}

int shell(const std::string& cmd) { return std::system(cmd.c_str()); }

}  // namespace

TEST_CASE("config round trips and hashes stably") {
  ExperimentConfig cfg;
  const auto j = cfg.to_json();
  const auto back = ExperimentConfig::from_json(j);
  REQUIRE(back.to_json().dump() == j.dump());
  REQUIRE(back.hash() == cfg.hash());

  const fs::path dir = fresh_dir("faithlab_cfg_test");
  const std::string path = (dir / "cfg.json").string();
  cfg.save(path);
  REQUIRE(ExperimentConfig::load(path).hash() == cfg.hash());

  ExperimentConfig other;
  other.master_seed = cfg.master_seed + 1;
  REQUIRE(other.hash() != cfg.hash());

  REQUIRE_THROWS_AS(ExperimentConfig::load((dir / "missing.json").string()), std::runtime_error);
  std::ofstream(dir / "broken.json") << "{not json";
  REQUIRE_THROWS_WITH(ExperimentConfig::load((dir / "broken.json").string()),
                      Catch::Matchers::ContainsSubstring("parse error"));
  fs::remove_all(dir);
}

TEST_CASE("config validation rejects bad settings") {
  auto reject = [](auto mutate, const std::string& fragment) {
    ExperimentConfig cfg;
    mutate(cfg);
    REQUIRE_THROWS_WITH(cfg.validate(), Catch::Matchers::ContainsSubstring(fragment));
  };

  reject([](auto& c) { c.corpus_source = "scraped"; }, "corpus.source");
  reject([](auto& c) { c.corpus_source = "file"; }, "corpus.path");
  reject([](auto& c) { c.test_fraction = 0.0; }, "test_fraction");
  reject([](auto& c) { c.test_fraction = 1.0; }, "test_fraction");
  reject([](auto& c) { c.model_kind = "transformer"; }, "model.kind");
  reject([](auto& c) { c.saliency_methods.clear(); }, "non-empty");
  reject([](auto& c) { c.saliency_methods = {"shapley"}; }, "shapley");
  reject(
      [](auto& c) {
        c.model_kind = "nb";
        c.saliency_methods = {"gradient"};
      },
      "needs logits");
  reject(
      [](auto& c) {
        c.model_kind = "nb";
        c.saliency_methods = {"ig"};
      },
      "needs logits");
  reject([](auto& c) { c.fraction = 0.0; }, "fraction");
  reject([](auto& c) { c.fraction = 1.5; }, "fraction");
  reject([](auto& c) { c.meta_mode = "sometimes"; }, "meta_mode");
  reject([](auto& c) { c.detector.momentum = 1.0; }, "momentum");
  reject([](auto& c) { c.detector.scalar_gain = 0.0; }, "scalar_gain");
  reject([](auto& c) { c.k_grid = {}; }, "k_grid");
  reject([](auto& c) { c.k_grid = {2, 2}; }, "k_grid");
  reject([](auto& c) { c.k_grid = {0}; }, "k_grid");
  reject([](auto& c) { c.masks_per_instance = 0; }, "masks_per_instance");
  reject([](auto& c) { c.num_approx = 0; }, "num_approx");
  reject([](auto& c) { c.num_eval_seeds = 1; }, "num_eval_seeds");
  reject([](auto& c) { c.cutoff_rule = "soft"; }, "cutoff");
  reject([](auto& c) { c.output_dir = ""; }, "output_dir");

  // nb with logit-free methods is fine
  ExperimentConfig ok;
  ok.model_kind = "nb";
  ok.saliency_methods = {"lime", "occlusion", "random"};
  REQUIRE_NOTHROW(ok.validate());
}

TEST_CASE("synthetic corpus is deterministic and shaped as configured") {
  SyntheticParams p;
  p.vocab_size = 200;
  p.strong_per_class = 10;
  p.medium_per_class = 40;
  p.n = 60;
  p.len_min = 12;
  p.len_max = 18;

  const auto a = generate_synthetic_corpus(p, 3);
  const auto b = generate_synthetic_corpus(p, 3);
  REQUIRE(a.size() == 60);
  REQUIRE(a.num_labels == 2);
  REQUIRE(a.label_names == std::vector<std::string>{"label_00", "label_01"});
  for (std::size_t i = 0; i < a.size(); ++i) {
    REQUIRE(a.instances[i].doc.id == b.instances[i].doc.id);
    REQUIRE(a.instances[i].doc.tokens == b.instances[i].doc.tokens);
    REQUIRE(a.instances[i].label == static_cast<int>(i % 2));
    REQUIRE(a.instances[i].doc.size() >= 12);
    REQUIRE(a.instances[i].doc.size() <= 18);
  }
  REQUIRE(a.instances[0].doc.id == "syn-000000");

  const auto c = generate_synthetic_corpus(p, 4);
  bool differ = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    differ = differ || a.instances[i].doc.tokens != c.instances[i].doc.tokens;
  }
  REQUIRE(differ);

  auto bad = p;
  bad.num_classes = 1;
  REQUIRE_THROWS_AS(generate_synthetic_corpus(bad, 1), std::invalid_argument);
  bad = p;
  bad.n = 5;
  REQUIRE_THROWS_AS(generate_synthetic_corpus(bad, 1), std::invalid_argument);
  bad = p;
  bad.profile = "zipf";
  REQUIRE_THROWS_AS(generate_synthetic_corpus(bad, 1), std::invalid_argument);
  bad = p;
  bad.len_max = bad.len_min - 1;
  REQUIRE_THROWS_AS(generate_synthetic_corpus(bad, 1), std::invalid_argument);
  bad = p;
  bad.vocab_size = 50;  // smaller than the tier blocks
  REQUIRE_THROWS_AS(generate_synthetic_corpus(bad, 1), std::invalid_argument);
}

TEST_CASE("synthetic profiles set the classification difficulty") {
  SyntheticParams tiered;
  tiered.vocab_size = 600;
  tiered.strong_per_class = 30;
  tiered.medium_per_class = 100;
  tiered.n = 600;
  {
    const auto all = generate_synthetic_corpus(tiered, 5);
    const auto [train, test] = split(all, 0.2, 5);
    const auto nb = Classifier::train_nb(train, 1.0);
    REQUIRE(accuracy_on(nb, test) >= 0.97);
  }

  SyntheticParams disjoint = tiered;
  disjoint.profile = "disjoint";
  disjoint.n = 300;
  {
    const auto all = generate_synthetic_corpus(disjoint, 5);
    const auto [train, test] = split(all, 0.2, 5);
    const auto nb = Classifier::train_nb(train, 1.0);
    REQUIRE(accuracy_on(nb, test) >= 0.99);  // class vocabularies never overlap
  }

  SyntheticParams uniform = tiered;
  uniform.profile = "uniform";
  uniform.vocab_size = 50;
  uniform.n = 1000;
  uniform.len_min = 10;
  uniform.len_max = 14;
  {
    const auto all = generate_synthetic_corpus(uniform, 5);
    const auto [train, test] = split(all, 0.2, 5);
    const auto nb = Classifier::train_nb(train, 1.0);
    const double acc = accuracy_on(nb, test);
    REQUIRE(acc >= 0.45);  // no signal: chance either way
    REQUIRE(acc <= 0.55);
  }
}

TEST_CASE("full pipeline writes every artifact it lists, reproducibly") {
  const fs::path out = fresh_dir("faithlab_run_test");
  const auto cfg = small_config(out.string());
  const auto manifest = run(cfg);
  const auto paths = run_paths(cfg);

  REQUIRE(paths.dir.filename().string() == "run-" + cfg.hash());
  REQUIRE(manifest.at("config_hash").get<std::string>() == cfg.hash());
  REQUIRE(manifest.at("format") == "faithlab.manifest.v1");
  const auto& prov = manifest.at("provenance");
  for (const char* part : {"vocabulary", "model", "case_detector", "codebook", "evaluator"}) {
    REQUIRE(prov.at(part).get<std::string>() == "train");
  }
  REQUIRE(manifest.at("seeds").contains("corpus"));
  REQUIRE(manifest.at("seeds").contains("detector:random"));

  for (const auto& name : manifest.at("artifacts")) {
    REQUIRE(fs::exists(paths.dir / name.get<std::string>()));
  }
  for (const char* name :
       {"corpus_train.jsonl", "corpus_test.jsonl", "model.json", "explanations_occlusion.jsonl",
        "explanations_random.jsonl", "cases_occlusion.jsonl", "cases_random.jsonl",
        "detector_occlusion.json", "detector_random.json", "eraser_detail.json", "attack_detail.json",
        "confidence_summary.json", "evaluator_true.json", "evaluator_approx0.json",
        "evaluator_approx1.json", "evaluator_seed0.json", "evaluator_seed1.json", "evalx_detail.json",
        "table1.csv", "table2.csv", "table3.csv", "table4.csv", "table5.csv", "fig4.csv"}) {
    INFO(name);
    REQUIRE(std::count(manifest.at("artifacts").begin(), manifest.at("artifacts").end(),
                       nlohmann::json(name)) == 1);
  }

  // exact column contracts for the csv outputs
  REQUIRE(first_line(paths.table1()) == "method,f1,comp,suff,comp_plus_suff,detector_accuracy,flip_count");
  REQUIRE(first_line(paths.table2()) == "method,detector_accuracy");
  const std::string sweep_header = "num_tokens,label_recovery_rate,acc,eacc,auroc,eauroc,fallback_rate";
  REQUIRE(first_line(paths.table3()) == sweep_header);
  REQUIRE(first_line(paths.table4()) == sweep_header);
  REQUIRE(first_line(paths.table5()) == sweep_header);
  REQUIRE(first_line(paths.fig4()) == "method,num_tokens,eacc,eauroc,eacc_cutoff,eauroc_cutoff");

  // 2 methods x (base + oracle + trained) rows, plus the header
  REQUIRE(count_lines(paths.table1()) == 1 + 3 * 2);
  REQUIRE(count_lines(paths.table2()) == 1 + 2);
  REQUIRE(count_lines(paths.table3()) == 1 + 2);   // one row per k
  REQUIRE(count_lines(paths.fig4()) == 1 + 2 * 2);  // both encodings per k

  const auto eraser = nlohmann::json::parse(read_file(paths.eraser_detail()));
  const auto test_corpus = load_corpus(paths.test_corpus().string(), "jsonl");
  REQUIRE(eraser.at("methods").at("occlusion").at("instances").size() == test_corpus.size());

  const auto attack = nlohmann::json::parse(read_file(paths.attack_detail()));
  REQUIRE(attack.at("modes").at("oracle").at("random").at("flip_count").get<int>() == 0);
  REQUIRE(attack.at("modes").at("oracle").at("random").at("detector_accuracy").get<double>() == 1.0);
  REQUIRE(attack.at("modes").at("trained").at("occlusion").contains("wrapped"));

  const auto confidence = nlohmann::json::parse(read_file(paths.confidence_summary()));
  for (const char* key : {"base_expl_only", "base_non_expl", "wrapped_expl_only", "wrapped_non_expl"}) {
    REQUIRE(confidence.at("modes").at("oracle").at("occlusion").contains(key));
  }

  // a rerun at a different thread count reproduces every byte
  std::map<std::string, std::string> before;
  for (const auto& entry : fs::directory_iterator(paths.dir)) {
    before[entry.path().filename().string()] = read_file(entry.path());
  }
  run(cfg, 3);
  for (const auto& [name, bytes] : before) {
    INFO(name);
    REQUIRE(read_file(paths.dir / name) == bytes);
  }
  std::size_t count = 0;
  for (const auto& entry : fs::directory_iterator(paths.dir)) {
    (void)entry;
    ++count;
  }
  REQUIRE(count == before.size());

  fs::remove_all(out);
}

TEST_CASE("a failing step removes the run directory and names itself") {
  const fs::path out = fresh_dir("faithlab_fail_test");
  ExperimentConfig cfg;
  cfg.corpus_source = "file";
  cfg.corpus_path = (out / "no_such_corpus.jsonl").string();
  cfg.output_dir = out.string();
  REQUIRE_THROWS_WITH(run(cfg), Catch::Matchers::ContainsSubstring("gen-data"));
  REQUIRE_FALSE(fs::exists(run_paths(cfg).dir));
  fs::remove_all(out);
}

#ifdef FAITHLAB_CLI_PATH
TEST_CASE("command line front end drives the pipeline") {
  const std::string cli = FAITHLAB_CLI_PATH;
  const fs::path out = fresh_dir("faithlab_cli_test");
  const fs::path logs = out / "logs";
  fs::create_directories(logs);

  ExperimentConfig cfg = small_config((out / "full").string());
  cfg.saliency_methods = {"random"};
  cfg.meta_mode = "oracle";
  cfg.evalx_enabled = false;
  const std::string cfg_path = (out / "cfg.json").string();
  cfg.save(cfg_path);

  auto quiet = [&](const std::string& tag) {
    return " > " + (logs / (tag + ".out")).string() + " 2> " + (logs / (tag + ".err")).string();
  };

  REQUIRE(shell(cli + " run --config " + cfg_path + quiet("run")) == 0);
  REQUIRE(fs::exists(run_paths(cfg).manifest()));

  // the same pipeline, one subcommand at a time, in its own output tree
  const std::string step_out = (out / "steps").string();
  const std::string common = " --config " + cfg_path + " --out " + step_out;
  ExperimentConfig step_cfg = cfg;
  step_cfg.output_dir = step_out;
  const auto paths = run_paths(step_cfg);
  for (const char* step : {"gen-data", "train", "explain", "eval-eraser", "attack-eraser", "report"}) {
    INFO(step);
    REQUIRE(shell(cli + " " + step + common + quiet(step)) == 0);
  }
  REQUIRE(fs::exists(paths.table1()));

  // report is a pure function of the detail files
  const std::string table1 = read_file(paths.table1());
  REQUIRE(shell(cli + " report" + common + quiet("report2")) == 0);
  REQUIRE(read_file(paths.table1()) == table1);

  // steps out of order: the error names the missing producer
  const std::string skip_out = (out / "skipped").string();
  const std::string skip_common = " --config " + cfg_path + " --out " + skip_out;
  REQUIRE(shell(cli + " gen-data" + skip_common + quiet("gen2")) == 0);
  REQUIRE(shell(cli + " eval-eraser" + skip_common + quiet("skip")) != 0);
  const std::string err = read_file(logs / "skip.err");
  REQUIRE(err.find("error:") != std::string::npos);
  REQUIRE(err.find("train") != std::string::npos);

  // no run directory at all
  REQUIRE(shell(cli + " train --config " + cfg_path + " --out " + (out / "void").string() +
                quiet("nodir")) != 0);
  REQUIRE(read_file(logs / "nodir.err").find("gen-data") != std::string::npos);

  REQUIRE(shell(cli + " bogus" + quiet("bogus")) != 0);
  REQUIRE(shell(cli + quiet("nosub")) != 0);
  REQUIRE(shell(cli + " run --config " + (out / "missing.json").string() + quiet("nocfg")) != 0);

  // --seed override lands in the run directory hash
  ExperimentConfig seeded = cfg;
  seeded.master_seed = 123;
  REQUIRE(shell(cli + " gen-data --config " + cfg_path + " --seed 123" + quiet("seeded")) == 0);
  REQUIRE(fs::exists(run_paths(seeded).train_corpus()));

  fs::remove_all(out);
}
#endif
