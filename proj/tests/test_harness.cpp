#include "doctest.h"

#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "oracles.hpp"
#include "sleepssl/config.hpp"
#include "sleepssl/harness.hpp"
#include "sleepssl/report.hpp"
#include "sleepssl/synthetic.hpp"

using namespace sleepssl;
using namespace sleepssl::harness;
using models::BackboneKind;
using models::ModelSpec;
using models::TeKind;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("sleepssl_h_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

ModelSpec tiny_spec() {
  ModelSpec s = ModelSpec::make(BackboneKind::Cnn1d, TeKind::Identity, 4);
  s.cnn_ch1 = 6;
  s.cnn_ch2 = 8;
  s.cnn_ch3 = 12;
  return s;
}

SyntheticSpec tiny_dataset_spec() {
  SyntheticSpec spec;
  spec.n_subjects = 4;
  spec.epochs_per_subject = 60;
  spec.sampling_rate_hz = 4;
  spec.seed = 5;
  return spec;
}

ExperimentConfig tiny_config(const fs::path& manifest) {
  ExperimentConfig cfg;
  cfg.dataset_name = "synthetic";
  cfg.manifest_path = manifest.string();
  cfg.model = tiny_spec();
  cfg.algorithm = Algorithm::Supervised;
  cfg.label_fraction = 1.0;
  cfg.folds = 2;
  cfg.seed = 11;
  cfg.pretrain_budget = {1, 32, 1e-3, 1e-4};
  cfg.finetune_budget = {1, 32, 1e-3, 1e-4};
  cfg.te_mode = TeMode::Native;
  return cfg;
}

}  // namespace

TEST_CASE("metrics oracle equivalence") {
  SUBCASE("perfect predictions") {
    std::vector<int> y = {0, 1, 2, 3, 4, 2, 2, 1};
    MetricsBundle m = metrics_from_predictions(y, y);
    CHECK(m.accuracy == 1.0);
    CHECK(m.macro_f1 == 1.0);
    CHECK(m.n_eval == 8);
  }
  SUBCASE("all-majority predictor on a balanced set") {
    std::vector<int> truth, pred;
    for (int c = 0; c < 5; ++c)
      for (int i = 0; i < 20; ++i) {
        truth.push_back(c);
        pred.push_back(2);
      }
    MetricsBundle m = metrics_from_predictions(truth, pred);
    CHECK(m.accuracy == doctest::Approx(0.2));
    // predicted class: P=0.2, R=1 -> F1=1/3; the other four present classes zero
    CHECK(m.macro_f1 == doctest::Approx((1.0 / 3.0) / 5.0).epsilon(1e-9));
    CHECK(m.macro_f1 == doctest::Approx(0.0667).epsilon(1e-2));
  }
  SUBCASE("hand-built three-class confusion case") {
    // truth\pred counts: [[5,2,0],[1,7,1],[0,3,6]] over classes 0..2
    std::vector<int> truth, pred;
    auto put = [&](int t, int p, int n) {
      for (int i = 0; i < n; ++i) {
        truth.push_back(t);
        pred.push_back(p);
      }
    };
    put(0, 0, 5);
    put(0, 1, 2);
    put(1, 0, 1);
    put(1, 1, 7);
    put(1, 2, 1);
    put(2, 1, 3);
    put(2, 2, 6);
    MetricsBundle m = metrics_from_predictions(truth, pred);
    auto want = oracle::metrics_bruteforce(truth, pred);
    CHECK(m.accuracy == want.accuracy);
    CHECK(m.macro_f1 == doctest::Approx(want.macro_f1).epsilon(1e-12));
    for (int c = 0; c < 5; ++c)
      CHECK(m.per_class_f1[static_cast<size_t>(c)] ==
            doctest::Approx(want.per_class_f1[static_cast<size_t>(c)]).epsilon(1e-12));
    CHECK(m.confusion[0][1] == 2);
    CHECK(m.confusion[2][2] == 6);
  }
  SUBCASE("random vectors match the brute-force oracle exactly") {
    Rng rng(21);
    for (int trial = 0; trial < 100; ++trial) {
      const int n = static_cast<int>(rng.uniform_int(1, 200));
      std::vector<int> truth, pred;
      for (int i = 0; i < n; ++i) {
        truth.push_back(static_cast<int>(rng.uniform_int(0, 4)));
        pred.push_back(static_cast<int>(rng.uniform_int(0, 4)));
      }
      MetricsBundle m = metrics_from_predictions(truth, pred);
      auto want = oracle::metrics_bruteforce(truth, pred);
      CHECK(m.accuracy == want.accuracy);
      CHECK(m.macro_f1 == doctest::Approx(want.macro_f1).epsilon(1e-12));
    }
  }
  SUBCASE("empty input is an error") { CHECK_THROWS(metrics_from_predictions({}, {})); }
}

TEST_CASE("class_aware_weights") {
  SUBCASE("balanced counts give unit weights") {
    auto w = class_aware_weights({100, 100, 100, 100, 100});
    for (float v : w) CHECK(v == doctest::Approx(1.0f));
  }
  SUBCASE("a 4x count gap gives a 1:2 weight ratio at beta=0.5") {
    auto w = class_aware_weights({100, 25, 100, 100, 100});
    CHECK(w[1] / w[0] == doctest::Approx(2.0).epsilon(1e-6));
  }
  SUBCASE("weights are normalized to mean 1") {
    auto w = class_aware_weights({500, 30, 210, 77, 1000});
    double mean = 0.0;
    for (float v : w) mean += v;
    mean /= 5.0;
    CHECK(mean == doctest::Approx(1.0).epsilon(1e-6));
  }
  SUBCASE("zero count is an error") { CHECK_THROWS(class_aware_weights({10, 0, 10, 10, 10})); }
}

TEST_CASE("synthetic dataset generator") {
  TempDir tmp("synth");
  SyntheticSpec spec = tiny_dataset_spec();
  spec.epochs_per_subject = 500;
  spec.n_subjects = 2;
  data::DatasetManifest m = generate_synthetic(spec, tmp.path);

  SUBCASE("priors are realized within one percent") {
    int64_t total = 0;
    for (int64_t c : m.class_counts) total += c;
    for (int c = 0; c < 5; ++c) {
      const double got = static_cast<double>(m.class_counts[static_cast<size_t>(c)]) /
                         static_cast<double>(total);
      CHECK(std::abs(got - spec.priors[static_cast<size_t>(c)]) < 0.01);
    }
  }
  SUBCASE("same seed regenerates byte-identical subject files") {
    TempDir tmp2("synth2");
    generate_synthetic(spec, tmp2.path);
    for (const auto& e : m.subjects) {
      std::ifstream a(tmp.path / e.path, std::ios::binary);
      std::ifstream b(tmp2.path / e.path, std::ios::binary);
      std::string ca((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
      std::string cb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
      CHECK(ca == cb);
    }
  }
  SUBCASE("zero-noise classes are separable by dominant frequency") {
    SyntheticSpec clean = spec;
    clean.noise_sigma = 0.0;
    clean.epochs_per_subject = 100;
    data::SubjectRecord rec = synthesize_subject(clean, 0);
    const double dt = 1.0 / static_cast<double>(clean.sampling_rate_hz);
    int64_t correct = 0;
    for (int64_t e = 0; e < rec.n_epochs(); ++e) {
      int best = -1;
      double best_power = -1.0;
      for (int c = 0; c < 5; ++c) {
        const double f = clean.generators[static_cast<size_t>(c)].base_freq_hz;
        double re = 0.0, im = 0.0;
        for (int64_t t = 0; t < rec.epoch_len; ++t) {
          const double w = 2.0 * 3.14159265358979 * f * static_cast<double>(t) * dt;
          re += rec.epochs.at2(e, t) * std::cos(w);
          im += rec.epochs.at2(e, t) * std::sin(w);
        }
        const double power = re * re + im * im;
        if (power > best_power) {
          best_power = power;
          best = c;
        }
      }
      correct += best == static_cast<int>(rec.labels[static_cast<size_t>(e)]);
    }
    CHECK(correct == rec.n_epochs());
  }
  SUBCASE("bad priors are rejected") {
    SyntheticSpec bad = spec;
    bad.priors = {0.5, 0.5, 0.5, 0.1, 0.1};
    CHECK_THROWS(generate_synthetic(bad, tmp.path / "bad"));
  }
}

TEST_CASE("finetune") {
  TempDir tmp("ft");
  SyntheticSpec dspec = tiny_dataset_spec();
  generate_synthetic(dspec, tmp.path);
  DatasetStore store(tmp.path / "manifest.json");
  auto [x, y] = store.epochs_for_subjects({"s00", "s01"}, "finetune#fold0");

  SUBCASE("zero-epoch budget returns loaded phi with fresh heads") {
    models::Model pre(tiny_spec(), 77);
    models::Checkpoint ck = models::encoder_checkpoint(pre);
    FinetuneBudget zero{0, 32, 1e-3, 1e-4};
    FinetuneResult r = finetune(ck, tiny_spec(), x, y, zero, 9);
    for (const auto& [name, v] : r.model.params().params()) {
      if (name.rfind("phi.", 0) != 0) continue;
      const Tensor& want = ck.tensors.at(name);
      for (int64_t i = 0; i < v->value.numel(); ++i) CHECK(v->value[i] == want[i]);
    }
    CHECK(r.steps == 0);
  }
  SUBCASE("empty label set and checkpoint mismatch are errors") {
    FinetuneBudget b{1, 32, 1e-3, 1e-4};
    Tensor empty({0, 120});
    CHECK_THROWS(finetune(std::nullopt, tiny_spec(), empty, {}, b, 1));
    models::ModelSpec other = tiny_spec();
    other.backbone = BackboneKind::AttnSleep;
    other.branch_ch = 4;
    other.branch_ch2 = 6;
    other.afr_ch = 6;
    models::Model pre(other, 1);
    CHECK_THROWS(finetune(models::encoder_checkpoint(pre), tiny_spec(), x, y, b, 1));
  }
  SUBCASE("two_stage_train doubles the step count on balanced input") {
    std::vector<data::Stage> yb;
    Tensor xb({60, 120});
    for (int64_t i = 0; i < 60; ++i) {
      std::copy_n(x.data() + (i % x.dim(0)) * 120, 120, xb.data() + i * 120);
      yb.push_back(static_cast<data::Stage>(i % 5));
    }
    FinetuneBudget b{2, 16, 1e-3, 1e-4};
    FinetuneResult r = two_stage_train(std::nullopt, tiny_spec(), xb, yb, b, 3);
    // balanced input: oversampling is a no-op, so both stages see 60 samples
    const int64_t per_stage = 2 * ((60 + 15) / 16);
    CHECK(r.steps == 2 * per_stage);
    CHECK(r.epoch_loss.size() == 4);  // two stages x two epochs
  }
}

TEST_CASE("run_experiment end to end on a tiny synthetic dataset") {
  TempDir tmp("run");
  generate_synthetic(tiny_dataset_spec(), tmp.path);
  ExperimentConfig cfg = tiny_config(tmp.path / "manifest.json");

  DatasetStore store(tmp.path / "manifest.json");
  RunResult r = run_experiment(cfg, store);
  REQUIRE(r.folds.size() == 2);
  for (const auto& f : r.folds) {
    CHECK(f.error.empty());
    CHECK(f.metrics.n_eval > 0);
  }
  CHECK(r.subject_isolation_ok);
  CHECK(r.mean_acc >= 0.0);

  SUBCASE("rerun reproduces hash and metrics exactly") {
    DatasetStore store2(tmp.path / "manifest.json");
    RunResult r2 = run_experiment(cfg, store2);
    CHECK(r2.config_hash == r.config_hash);
    CHECK(r2.mean_acc == r.mean_acc);
    CHECK(r2.mean_mf1 == r.mean_mf1);
    for (size_t i = 0; i < r.folds.size(); ++i)
      CHECK(r2.folds[i].metrics.accuracy == r.folds[i].metrics.accuracy);
  }
  SUBCASE("ssl run produces checkpoints and isolates test subjects") {
    ExperimentConfig ssl = cfg;
    ssl.algorithm = Algorithm::SimClr;
    ssl.pretrain_budget.epochs = 1;
    DatasetStore store3(tmp.path / "manifest.json");
    RunResult rs = run_experiment(ssl, store3, tmp.path / "work");
    for (const auto& f : rs.folds) {
      CHECK(f.error.empty());
      CHECK(!f.pretrain_trace.empty());
      CHECK(fs::exists(f.checkpoint_path));
    }
    CHECK(rs.subject_isolation_ok);
  }
  SUBCASE("results persistence round trips") {
    const fs::path jsonl = tmp.path / "results.jsonl";
    append_result(jsonl, r);
    CHECK(has_result(jsonl, r.config_hash));
    CHECK(!has_result(jsonl, r.config_hash + 1));
    auto loaded = load_results(jsonl);
    REQUIRE(loaded.size() == 1);
    CHECK(loaded[0].config_hash == r.config_hash);
    CHECK(loaded[0].mean_mf1 == r.mean_mf1);
    CHECK(loaded[0].folds.size() == r.folds.size());
  }
}

TEST_CASE("transfer_experiment") {
  TempDir tmp("transfer");
  SyntheticSpec dspec = tiny_dataset_spec();
  dspec.subject_shift = 0.2;
  generate_synthetic(dspec, tmp.path);
  ExperimentConfig cfg = tiny_config(tmp.path / "manifest.json");
  cfg.source_subject = "s00";
  cfg.target_subject = "s03";

  SUBCASE("source == target is rejected") {
    ExperimentConfig bad = cfg;
    bad.target_subject = "s00";
    DatasetStore store(tmp.path / "manifest.json");
    CHECK_THROWS(transfer_experiment(bad, store));
  }
  SUBCASE("target data is touched only in the evaluation phase") {
    DatasetStore store(tmp.path / "manifest.json");
    RunResult r = transfer_experiment(cfg, store);
    REQUIRE(r.folds.size() == 1);
    CHECK(r.folds[0].error.empty());
    CHECK(r.subject_isolation_ok);
    for (const auto& a : store.audit_log())
      if (a.subject_id == "s03") CHECK(a.phase.rfind("evaluate", 0) == 0);
  }
}

TEST_CASE("run file parsing and grid expansion") {
  TempDir tmp("cfg");
  const fs::path p = tmp.path / "run.toml";
  std::ofstream f(p);
  f << "[dataset]\n"
       "manifest = data/manifest.json\n"
       "name = synthetic\n"
       "[model]\n"
       "backbone = cnn1d\n"
       "sampling_rate_hz = 4\n"
       "cnn_ch1 = 6\n"
       "cnn_ch2 = 8\n"
       "cnn_ch3 = 12\n"
       "[train]\n"
       "pretrain_epochs = 3\n"
       "finetune_epochs = 2\n"
       "batch = 16\n"
       "lr = 1e-3\n"
       "weight_decay = 1e-4\n"
       "[experiment]\n"
       "algorithms = supervised, simclr\n"
       "label_fractions = 0.01, 1.0\n"
       "folds = 2\n"
       "seed = 9\n"
       "imbalance = none\n"
       "te_mode = native\n"
       "[augment]\n"
       "noise_sigma = 0.8\n"
       "[pretext]\n"
       "tau = 0.2\n"
       "[output]\n"
       "results = out.jsonl\n";
  f.close();
  RunFile rf = parse_run_file(p);
  CHECK(rf.base.manifest_path == "data/manifest.json");
  CHECK(rf.base.pretrain_budget.epochs == 3);
  CHECK(rf.base.finetune_budget.batch == 16);
  CHECK(rf.results_path == "out.jsonl");
  auto grid = expand_grid(rf);
  REQUIRE(grid.size() == 4);
  std::set<uint64_t> hashes;
  for (const auto& c : grid) hashes.insert(c.config_hash());
  CHECK(hashes.size() == 4);
  ExperimentConfig round = ExperimentConfig::from_json(grid[1].to_json());
  CHECK(round.config_hash() == grid[1].config_hash());
}

TEST_CASE("reports") {
  TempDir tmp("report");
  generate_synthetic(tiny_dataset_spec(), tmp.path);
  ExperimentConfig base = tiny_config(tmp.path / "manifest.json");

  // One real run recycled under edited configs keeps this cheap.
  DatasetStore store(tmp.path / "manifest.json");
  RunResult proto = run_experiment(base, store);
  auto with = [&](Algorithm a, double frac, ImbalanceMode imb) {
    ExperimentConfig c = base;
    c.algorithm = a;
    c.label_fraction = frac;
    c.imbalance = imb;
    c.resolve_te();
    RunResult r = proto;
    r.config_json = c.to_json();
    r.config_hash = c.config_hash();
    r.mean_mf1 = 0.3 + 0.1 * static_cast<double>(a) + 0.2 * frac +
                 (imb == ImbalanceMode::OversamplePretext ? 0.011 : 0.0);
    return r;
  };

  SUBCASE("table2 has the seven metric columns and rank flags") {
    std::vector<RunResult> rs = {with(Algorithm::Supervised, 0.01, ImbalanceMode::None),
                                 with(Algorithm::SimClr, 0.01, ImbalanceMode::None)};
    aggregate_report(rs, Layout::Table2, tmp.path / "rep");
    std::ifstream f(tmp.path / "rep/table2.csv");
    std::string header;
    std::getline(f, header);
    CHECK(header ==
          "backbone,algorithm,label_fraction,W,N1,N2,N3,REM,ACC,MF1,"
          "flag_W,flag_N1,flag_N2,flag_N3,flag_REM,flag_ACC,flag_MF1");
    int rows = 0;
    std::string line;
    while (std::getline(f, line))
      if (!line.empty()) ++rows;
    CHECK(rows == 2);
  }
  SUBCASE("fig2 emits one curve point per fraction and an svg") {
    std::vector<RunResult> rs;
    for (double frac : {0.01, 0.05, 0.10, 1.0}) {
      rs.push_back(with(Algorithm::Supervised, frac, ImbalanceMode::None));
      rs.push_back(with(Algorithm::TsTcc, frac, ImbalanceMode::None));
    }
    aggregate_report(rs, Layout::Fig2Curve, tmp.path / "rep2");
    std::ifstream f(tmp.path / "rep2/fig2_curve.csv");
    std::string all((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    CHECK(std::count(all.begin(), all.end(), '\n') == 9);  // header + 2 algos x 4 fractions
    CHECK(fs::exists(tmp.path / "rep2/fig2_curve.svg"));
  }
  SUBCASE("fig3 delta equals the recomputed |balanced - imbalanced| gap") {
    std::vector<RunResult> rs = {with(Algorithm::SimClr, 0.01, ImbalanceMode::None),
                                 with(Algorithm::SimClr, 0.01, ImbalanceMode::OversamplePretext)};
    aggregate_report(rs, Layout::Fig3Bars, tmp.path / "rep3");
    std::ifstream f(tmp.path / "rep3/fig3_bars.csv");
    std::string header, row;
    std::getline(f, header);
    std::getline(f, row);
    const double want = std::abs(rs[1].mean_mf1 - rs[0].mean_mf1);
    CHECK(row.find("simclr,") == 0);
    const auto last_comma = row.rfind(',');
    CHECK(std::stod(row.substr(last_comma + 1)) == doctest::Approx(want).epsilon(1e-6));
  }
  SUBCASE("re-emission is byte-identical") {
    std::vector<RunResult> rs = {with(Algorithm::Supervised, 0.01, ImbalanceMode::None),
                                 with(Algorithm::Cpc, 0.01, ImbalanceMode::None)};
    aggregate_report(rs, Layout::Table2, tmp.path / "repA");
    aggregate_report(rs, Layout::Table2, tmp.path / "repB");
    std::ifstream a(tmp.path / "repA/table2.csv"), b(tmp.path / "repB/table2.csv");
    std::string ca((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
    std::string cb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
    CHECK(ca == cb);
  }
  SUBCASE("mixed datasets are rejected") {
    RunResult other = proto;
    ExperimentConfig c = base;
    c.dataset_name = "different";
    other.config_json = c.to_json();
    CHECK_THROWS(aggregate_report({proto, other}, Layout::Table2, tmp.path / "repX"));
  }
}
