// Command-line front end: dataset ingestion, synthetic data, pretraining,
// cross-validated experiment runs, cross-subject transfer, and report
// emission over stored results.
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "sleepssl/config.hpp"
#include "sleepssl/dataio.hpp"
#include "sleepssl/harness.hpp"
#include "sleepssl/parallel.hpp"
#include "sleepssl/pretext.hpp"
#include "sleepssl/report.hpp"
#include "sleepssl/synthetic.hpp"

namespace fs = std::filesystem;
using namespace sleepssl;

namespace {

int cmd_ingest(const std::string& in_dir, const std::string& scheme, bool do_trim,
               const std::string& out_dir, const std::string& name) {
  if (!data::scheme_registered(scheme)) {
    std::cerr << "unknown annotation scheme '" << scheme << "' (registered: aasm, rk)\n";
    return 2;
  }
  fs::create_directories(out_dir);
  data::DatasetManifest manifest;
  manifest.name = name;
  int64_t srate = 0;
  for (const auto& entry : fs::directory_iterator(in_dir)) {
    if (entry.path().extension() != ".ssb") continue;
    auto [rec, raw_codes] = data::load_subject_raw(entry.path());
    data::AasmMapping mapped = data::map_to_aasm(raw_codes, scheme);
    // Drop masked epochs, then attach the five-class labels.
    data::SubjectRecord clean;
    clean.subject_id = rec.subject_id;
    clean.sampling_rate_hz = rec.sampling_rate_hz;
    clean.epoch_len = rec.epoch_len;
    clean.channel = rec.channel;
    const int64_t kept = static_cast<int64_t>(mapped.stages.size());
    clean.epochs = Tensor({kept, rec.epoch_len});
    int64_t w = 0;
    for (int64_t i = 0; i < rec.n_epochs(); ++i) {
      if (mapped.drop_mask[static_cast<size_t>(i)]) continue;
      std::copy_n(rec.epochs.data() + i * rec.epoch_len, rec.epoch_len,
                  clean.epochs.data() + w * rec.epoch_len);
      ++w;
    }
    clean.labels = mapped.stages;
    if (do_trim) clean = data::trim_wake(clean);
    const std::string fname = clean.subject_id + ".ssb";
    data::store_subject(clean, fs::path(out_dir) / fname);
    manifest.subjects.push_back({clean.subject_id, fname, clean.n_epochs()});
    for (data::Stage s : clean.labels) manifest.class_counts[static_cast<size_t>(s)]++;
    manifest.sampling_rate_hz = clean.sampling_rate_hz;
    manifest.channel = clean.channel;
    srate = clean.sampling_rate_hz;
    std::cout << "ingested " << clean.subject_id << ": " << clean.n_epochs() << " epochs\n";
  }
  if (manifest.subjects.empty()) {
    std::cerr << "no .ssb subjects found in " << in_dir << "\n";
    return 2;
  }
  (void)srate;
  manifest.save(fs::path(out_dir) / "manifest.json");
  std::cout << "wrote " << out_dir << "/manifest.json with " << manifest.subjects.size()
            << " subjects\n";
  return 0;
}

int cmd_synth(int subjects, int64_t epochs, int64_t srate, double shift, double noise,
              uint64_t seed, const std::string& out_dir) {
  harness::SyntheticSpec spec;
  spec.n_subjects = subjects;
  spec.epochs_per_subject = epochs;
  spec.sampling_rate_hz = srate;
  spec.subject_shift = shift;
  spec.noise_sigma = noise;
  spec.seed = seed;
  data::DatasetManifest m = harness::generate_synthetic(spec, out_dir);
  int64_t total = 0;
  for (int64_t c : m.class_counts) total += c;
  std::cout << "wrote " << m.subjects.size() << " subjects, " << total << " epochs to "
            << out_dir << "\n";
  return 0;
}

int cmd_pretrain(const std::string& config_path, const std::string& algo, int fold,
                 const std::string& out_dir) {
  harness::RunFile rf = harness::parse_run_file(config_path);
  harness::ExperimentConfig cfg = rf.base;
  cfg.algorithm = harness::algorithm_from_string(algo);
  cfg.resolve_te();
  harness::DatasetStore store(cfg.manifest_path);
  if (cfg.dataset_name.empty()) cfg.dataset_name = store.manifest().name;
  data::FoldPlan plan = data::make_fold_plan(store.manifest(), cfg.folds, cfg.seed);
  if (fold < 0 || fold >= cfg.folds) {
    std::cerr << "fold " << fold << " outside 0.." << cfg.folds - 1 << "\n";
    return 2;
  }
  auto train_ids = plan.train_subjects(fold, store.manifest());
  auto [x, _] = store.epochs_for_subjects(train_ids, "pretrain#fold" + std::to_string(fold));
  models::Model model(cfg.model, Rng::mix(cfg.seed, static_cast<uint64_t>(fold) + 0xf01d));
  fs::create_directories(out_dir);
  const fs::path trace = fs::path(out_dir) / ("trace_fold" + std::to_string(fold) + ".csv");
  pretext::PretrainResult r =
      pretext::pretrain(model, harness::pretext_algo(cfg.algorithm), x, cfg.pretrain_budget,
                        cfg.pretext_cfg, Rng::mix(cfg.seed, 0x97e7ull), trace);
  const fs::path ckpt = fs::path(out_dir) / ("encoder_fold" + std::to_string(fold) + ".ckpt");
  r.encoder.save(ckpt);
  std::cout << "pretrained " << algo << " on fold " << fold << " (" << r.steps << " steps); "
            << "first-epoch loss " << (r.epoch_loss.empty() ? 0.0 : r.epoch_loss.front())
            << ", last " << (r.epoch_loss.empty() ? 0.0 : r.epoch_loss.back()) << "\n"
            << "encoder checkpoint: " << ckpt.string() << "\n";
  return 0;
}

int cmd_run(const std::string& config_path, bool grid) {
  harness::RunFile rf = harness::parse_run_file(config_path);
  std::vector<harness::ExperimentConfig> configs;
  if (grid) {
    configs = harness::expand_grid(rf);
  } else {
    harness::ExperimentConfig c = rf.base;
    c.resolve_te();
    configs.push_back(c);
  }
  harness::DatasetStore store(rf.base.manifest_path);
  for (auto& cfg : configs) {
    if (cfg.dataset_name.empty()) cfg.dataset_name = store.manifest().name;
    const uint64_t hash = cfg.config_hash();
    if (harness::has_result(rf.results_path, hash)) {
      std::printf("skip %016llx (already in %s)\n", static_cast<unsigned long long>(hash),
                  rf.results_path.c_str());
      continue;
    }
    harness::RunResult r = harness::run_experiment(cfg, store, rf.work_dir);
    harness::append_result(rf.results_path, r);
    std::printf("%-10s frac=%.2f acc=%.4f+-%.4f mf1=%.4f+-%.4f (%.1fs)\n",
                harness::to_string(cfg.algorithm).c_str(), cfg.label_fraction, r.mean_acc,
                r.std_acc, r.mean_mf1, r.std_mf1, r.wall_time_s);
  }
  return 0;
}

int cmd_transfer(const std::string& config_path, const std::string& source,
                 const std::string& target, const std::string& algo) {
  harness::RunFile rf = harness::parse_run_file(config_path);
  harness::ExperimentConfig cfg = rf.base;
  cfg.algorithm = harness::algorithm_from_string(algo);
  cfg.source_subject = source;
  cfg.target_subject = target;
  cfg.resolve_te();
  harness::DatasetStore store(cfg.manifest_path);
  if (cfg.dataset_name.empty()) cfg.dataset_name = store.manifest().name;
  harness::RunResult r = harness::transfer_experiment(cfg, store, rf.work_dir);
  harness::append_result(rf.results_path, r);
  if (!r.folds[0].error.empty()) {
    std::cerr << "transfer failed: " << r.folds[0].error << "\n";
    return 1;
  }
  std::printf("%s -> %s [%s]: acc=%.4f mf1=%.4f isolation=%s\n", source.c_str(), target.c_str(),
              algo.c_str(), r.mean_acc, r.mean_mf1, r.subject_isolation_ok ? "ok" : "VIOLATED");
  return 0;
}

int cmd_report(const std::string& layout, const std::string& in, const std::string& out) {
  auto results = harness::load_results(in);
  harness::aggregate_report(results, harness::layout_from_string(layout), out);
  std::cout << "wrote " << layout << " report for " << results.size() << " results to " << out
            << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"label-efficiency benchmark for self-supervised sleep staging"};
  app.require_subcommand(1);

  std::string serial_flag;
  app.add_flag_callback(
      "--serial", [] { parallel::set_mode(parallel::Mode::Serial); },
      "use the serial reference kernels instead of OpenMP");

  // ingest
  auto* ingest = app.add_subcommand("ingest", "map raw-labeled subjects to AASM and trim wake");
  std::string in_dir, scheme = "rk", out_dir, name = "dataset";
  bool trim = false;
  ingest->add_option("--in", in_dir, "directory of raw .ssb subjects")->required();
  ingest->add_option("--scheme", scheme, "annotation scheme id (aasm, rk)");
  ingest->add_flag("--trim-wake", trim, "trim leading/trailing wake beyond 30 minutes");
  ingest->add_option("--out", out_dir, "output directory")->required();
  ingest->add_option("--name", name, "dataset name for the manifest");

  // synth
  auto* synth = app.add_subcommand("synth", "generate the seeded synthetic dataset");
  int s_subjects = 10;
  int64_t s_epochs = 500, s_rate = 4;
  double s_shift = 0.0, s_noise = 0.5;
  uint64_t s_seed = 1;
  std::string s_out;
  synth->add_option("--subjects", s_subjects, "number of subjects");
  synth->add_option("--epochs", s_epochs, "epochs per subject");
  synth->add_option("--rate", s_rate, "sampling rate in Hz (epoch is 30 s)");
  synth->add_option("--shift", s_shift, "per-subject fractional frequency shift");
  synth->add_option("--noise", s_noise, "additive noise sigma");
  synth->add_option("--seed", s_seed, "generator seed");
  synth->add_option("--out", s_out, "output directory")->required();

  // pretrain
  auto* pre = app.add_subcommand("pretrain", "self-supervised pretraining for one fold");
  std::string p_config, p_algo = "tstcc", p_out = "ckpt";
  int p_fold = 0;
  pre->add_option("--config", p_config, "run configuration file")->required();
  pre->add_option("--algo", p_algo, "clstran|simclr|cpc|tstcc");
  pre->add_option("--fold", p_fold, "fold index");
  pre->add_option("--out", p_out, "checkpoint/trace output directory");

  // run
  auto* run = app.add_subcommand("run", "cross-validated experiment(s) from a config file");
  std::string r_config;
  bool r_grid = false;
  run->add_option("--config", r_config, "run configuration file")->required();
  run->add_flag("--grid", r_grid, "expand algorithms x label_fractions into a grid");

  // transfer
  auto* tr = app.add_subcommand("transfer", "cross-subject transfer run");
  std::string t_config, t_source, t_target, t_algo = "supervised";
  tr->add_option("--config", t_config, "run configuration file")->required();
  tr->add_option("--source", t_source, "source subject id")->required();
  tr->add_option("--target", t_target, "target subject id")->required();
  tr->add_option("--algo", t_algo, "supervised|clstran|simclr|cpc|tstcc");

  // report
  auto* rep = app.add_subcommand("report", "emit CSV/SVG reports from stored results");
  std::string rp_layout = "table2", rp_in = "results.jsonl", rp_out = "reports";
  rep->add_option("--layout", rp_layout, "table2|fig2|fig3|table3");
  rep->add_option("--in", rp_in, "results JSONL path");
  rep->add_option("--out", rp_out, "output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*ingest) return cmd_ingest(in_dir, scheme, trim, out_dir, name);
    if (*synth) return cmd_synth(s_subjects, s_epochs, s_rate, s_shift, s_noise, s_seed, s_out);
    if (*pre) return cmd_pretrain(p_config, p_algo, p_fold, p_out);
    if (*run) return cmd_run(r_config, r_grid);
    if (*tr) return cmd_transfer(t_config, t_source, t_target, t_algo);
    if (*rep) return cmd_report(rp_layout, rp_in, rp_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
