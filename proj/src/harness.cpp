#include "sleepssl/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "json.hpp"

namespace sleepssl::harness {

using models::Model;
using models::ModelSpec;
using nlohmann::json;
using nn::Var;

Algorithm algorithm_from_string(const std::string& s) {
  if (s == "supervised") return Algorithm::Supervised;
  if (s == "clstran") return Algorithm::ClsTran;
  if (s == "simclr") return Algorithm::SimClr;
  if (s == "cpc") return Algorithm::Cpc;
  if (s == "tstcc") return Algorithm::TsTcc;
  throw std::invalid_argument("unknown algorithm '" + s + "'");
}

std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::Supervised: return "supervised";
    case Algorithm::ClsTran: return "clstran";
    case Algorithm::SimClr: return "simclr";
    case Algorithm::Cpc: return "cpc";
    case Algorithm::TsTcc: return "tstcc";
  }
  return "?";
}

bool is_ssl(Algorithm a) { return a != Algorithm::Supervised; }

pretext::Algo pretext_algo(Algorithm a) {
  switch (a) {
    case Algorithm::ClsTran: return pretext::Algo::ClsTran;
    case Algorithm::SimClr: return pretext::Algo::SimClr;
    case Algorithm::Cpc: return pretext::Algo::Cpc;
    case Algorithm::TsTcc: return pretext::Algo::TsTcc;
    case Algorithm::Supervised: break;
  }
  throw std::invalid_argument("supervised runs have no pretext algorithm");
}

ImbalanceMode imbalance_from_string(const std::string& s) {
  if (s == "none") return ImbalanceMode::None;
  if (s == "oversample_pretext") return ImbalanceMode::OversamplePretext;
  if (s == "class_aware_loss") return ImbalanceMode::ClassAwareLoss;
  if (s == "two_stage") return ImbalanceMode::TwoStage;
  throw std::invalid_argument("unknown imbalance mode '" + s + "'");
}

std::string to_string(ImbalanceMode m) {
  switch (m) {
    case ImbalanceMode::None: return "none";
    case ImbalanceMode::OversamplePretext: return "oversample_pretext";
    case ImbalanceMode::ClassAwareLoss: return "class_aware_loss";
    case ImbalanceMode::TwoStage: return "two_stage";
  }
  return "?";
}

TeMode te_mode_from_string(const std::string& s) {
  if (s == "native") return TeMode::Native;
  if (s == "swapped") return TeMode::Swapped;
  if (s == "none") return TeMode::None;
  throw std::invalid_argument("unknown te mode '" + s + "'");
}

std::string to_string(TeMode m) {
  switch (m) {
    case TeMode::Native: return "native";
    case TeMode::Swapped: return "swapped";
    case TeMode::None: return "none";
  }
  return "?";
}

void ExperimentConfig::resolve_te() {
  switch (te_mode) {
    case TeMode::Native: model.te = models::native_te(model.backbone); break;
    case TeMode::Swapped: model.te = models::swapped_te(model.backbone); break;
    case TeMode::None: model.te = models::TeKind::Identity; break;
  }
}

std::string ExperimentConfig::to_json() const {
  json j = {{"dataset_name", dataset_name},
            {"manifest_path", manifest_path},
            {"model", json::parse(model.to_json())},
            {"algorithm", harness::to_string(algorithm)},
            {"label_fraction", label_fraction},
            {"folds", folds},
            {"seed", seed},
            {"pretrain",
             {{"epochs", pretrain_budget.epochs},
              {"batch", pretrain_budget.batch},
              {"lr", pretrain_budget.lr},
              {"weight_decay", pretrain_budget.weight_decay}}},
            {"finetune",
             {{"epochs", finetune_budget.epochs},
              {"batch", finetune_budget.batch},
              {"lr", finetune_budget.lr},
              {"weight_decay", finetune_budget.weight_decay}}},
            {"imbalance", harness::to_string(imbalance)},
            {"te_mode", harness::to_string(te_mode)},
            {"pretext",
             {{"tau", pretext_cfg.tau},
              {"projection_dim", pretext_cfg.projection_dim},
              {"cpc_context_fraction", pretext_cfg.cpc.context_len_fraction},
              {"cpc_k_future", pretext_cfg.cpc.k_future},
              {"cpc_aggregator_hidden", pretext_cfg.cpc.aggregator_hidden},
              {"lambda1", pretext_cfg.lambda1},
              {"lambda2", pretext_cfg.lambda2}}},
            {"augment",
             {{"noise_sigma", pretext_cfg.views.noise_sigma},
              {"weak_noise_sigma", pretext_cfg.views.weak_noise_sigma},
              {"weak_scale_sigma", pretext_cfg.views.weak_scale_sigma},
              {"shift_fraction", pretext_cfg.views.shift_fraction},
              {"n_segments", pretext_cfg.views.n_segments}}},
            {"source_subject", source_subject},
            {"target_subject", target_subject}};
  return j.dump();
}

ExperimentConfig ExperimentConfig::from_json(const std::string& text) {
  json j = json::parse(text);
  ExperimentConfig c;
  c.dataset_name = j.at("dataset_name").get<std::string>();
  c.manifest_path = j.at("manifest_path").get<std::string>();
  c.model = ModelSpec::from_json(j.at("model").dump());
  c.algorithm = algorithm_from_string(j.at("algorithm").get<std::string>());
  c.label_fraction = j.at("label_fraction").get<double>();
  c.folds = j.at("folds").get<int>();
  c.seed = j.at("seed").get<uint64_t>();
  c.pretrain_budget = {j.at("pretrain").at("epochs").get<int64_t>(),
                       j.at("pretrain").at("batch").get<int64_t>(),
                       j.at("pretrain").at("lr").get<double>(),
                       j.at("pretrain").at("weight_decay").get<double>()};
  c.finetune_budget = {j.at("finetune").at("epochs").get<int64_t>(),
                       j.at("finetune").at("batch").get<int64_t>(),
                       j.at("finetune").at("lr").get<double>(),
                       j.at("finetune").at("weight_decay").get<double>()};
  c.imbalance = imbalance_from_string(j.at("imbalance").get<std::string>());
  c.te_mode = te_mode_from_string(j.at("te_mode").get<std::string>());
  c.pretext_cfg.tau = j.at("pretext").at("tau").get<double>();
  c.pretext_cfg.projection_dim = j.at("pretext").at("projection_dim").get<int64_t>();
  c.pretext_cfg.cpc.context_len_fraction =
      j.at("pretext").at("cpc_context_fraction").get<double>();
  c.pretext_cfg.cpc.k_future = j.at("pretext").at("cpc_k_future").get<int64_t>();
  c.pretext_cfg.cpc.aggregator_hidden =
      j.at("pretext").at("cpc_aggregator_hidden").get<int64_t>();
  c.pretext_cfg.lambda1 = j.at("pretext").at("lambda1").get<double>();
  c.pretext_cfg.lambda2 = j.at("pretext").at("lambda2").get<double>();
  c.pretext_cfg.views.noise_sigma = j.at("augment").at("noise_sigma").get<double>();
  c.pretext_cfg.views.weak_noise_sigma = j.at("augment").at("weak_noise_sigma").get<double>();
  c.pretext_cfg.views.weak_scale_sigma = j.at("augment").at("weak_scale_sigma").get<double>();
  c.pretext_cfg.views.shift_fraction = j.at("augment").at("shift_fraction").get<double>();
  c.pretext_cfg.views.n_segments = j.at("augment").at("n_segments").get<int>();
  c.source_subject = j.value("source_subject", std::string{});
  c.target_subject = j.value("target_subject", std::string{});
  return c;
}

uint64_t ExperimentConfig::config_hash() const {
  const std::string text = to_json();
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  return h;
}

// ---------------------------------------------------------------- DatasetStore

DatasetStore::DatasetStore(const std::filesystem::path& manifest_path)
    : manifest_(data::DatasetManifest::load(manifest_path)),
      base_dir_(manifest_path.parent_path()) {}

const data::SubjectRecord& DatasetStore::subject(const std::string& id,
                                                 const std::string& phase) {
  std::lock_guard<std::mutex> lock(mu_);
  log_.push_back({phase, id});
  auto it = cache_.find(id);
  if (it != cache_.end()) return it->second;
  for (const auto& e : manifest_.subjects) {
    if (e.subject_id != id) continue;
    std::filesystem::path p = e.path;
    if (p.is_relative()) p = base_dir_ / p;
    auto [ins, _] = cache_.emplace(id, data::load_subject(p));
    return ins->second;
  }
  throw std::invalid_argument("DatasetStore: unknown subject '" + id + "'");
}

std::pair<Tensor, std::vector<data::Stage>> DatasetStore::epochs_for_subjects(
    const std::vector<std::string>& ids, const std::string& phase) {
  int64_t total = 0;
  for (const auto& id : ids) total += subject(id, phase).n_epochs();
  const int64_t len = 30 * manifest_.sampling_rate_hz;
  Tensor x({total, len});
  std::vector<data::Stage> y;
  y.reserve(static_cast<size_t>(total));
  int64_t row = 0;
  for (const auto& id : ids) {
    const auto& rec = subject(id, phase);
    std::copy_n(rec.epochs.data(), rec.epochs.numel(), x.data() + row * len);
    y.insert(y.end(), rec.labels.begin(), rec.labels.end());
    row += rec.n_epochs();
  }
  return {std::move(x), std::move(y)};
}

std::pair<Tensor, std::vector<data::Stage>> DatasetStore::epochs_for_refs(
    const std::vector<data::EpochRef>& refs, const std::string& phase) {
  const int64_t len = 30 * manifest_.sampling_rate_hz;
  Tensor x({static_cast<int64_t>(refs.size()), len});
  std::vector<data::Stage> y;
  y.reserve(refs.size());
  for (size_t i = 0; i < refs.size(); ++i) {
    const auto& rec = subject(refs[i].subject_id, phase);
    if (refs[i].epoch_index < 0 || refs[i].epoch_index >= rec.n_epochs())
      throw std::out_of_range("DatasetStore: epoch index out of range for subject " +
                              refs[i].subject_id);
    std::copy_n(rec.epochs.data() + refs[i].epoch_index * len, len,
                x.data() + static_cast<int64_t>(i) * len);
    y.push_back(rec.labels[static_cast<size_t>(refs[i].epoch_index)]);
  }
  return {std::move(x), std::move(y)};
}

std::vector<data::EpochRef> DatasetStore::refs_for_subjects(const std::vector<std::string>& ids,
                                                            const std::string& phase) {
  std::vector<data::EpochRef> refs;
  for (const auto& id : ids) {
    const auto& rec = subject(id, phase);
    for (int64_t i = 0; i < rec.n_epochs(); ++i)
      refs.push_back({id, i, rec.labels[static_cast<size_t>(i)]});
  }
  return refs;
}

std::vector<DatasetStore::Access> DatasetStore::audit_log() const {
  std::lock_guard<std::mutex> lock(mu_);
  return log_;
}

bool DatasetStore::only_evaluated(const std::vector<std::string>& ids) const {
  std::lock_guard<std::mutex> lock(mu_);
  for (const auto& a : log_) {
    const std::string phase = a.phase.substr(0, a.phase.find('#'));
    if (phase != "evaluate" && std::find(ids.begin(), ids.end(), a.subject_id) != ids.end())
      return false;
  }
  return true;
}

bool DatasetStore::fold_isolated(const std::vector<std::string>& ids, int fold) const {
  std::lock_guard<std::mutex> lock(mu_);
  const std::string tag = "#fold" + std::to_string(fold);
  for (const auto& a : log_) {
    const auto hash_pos = a.phase.find('#');
    if (hash_pos == std::string::npos || a.phase.substr(hash_pos) != tag) continue;
    if (a.phase.substr(0, hash_pos) != "evaluate" &&
        std::find(ids.begin(), ids.end(), a.subject_id) != ids.end())
      return false;
  }
  return true;
}

// ---------------------------------------------------------------- training

std::vector<float> class_aware_weights(const std::array<int64_t, data::kNumStages>& counts,
                                       double beta) {
  int64_t total = 0;
  for (int64_t c : counts) {
    if (c <= 0) throw std::invalid_argument("class_aware_weights: zero class count");
    total += c;
  }
  std::vector<float> w(data::kNumStages);
  double sum = 0.0;
  for (int c = 0; c < data::kNumStages; ++c) {
    const double v = std::pow(static_cast<double>(total) /
                                  static_cast<double>(counts[static_cast<size_t>(c)]),
                              beta);
    w[static_cast<size_t>(c)] = static_cast<float>(v);
    sum += v;
  }
  const double mean = sum / data::kNumStages;
  for (auto& v : w) v = static_cast<float>(v / mean);
  return w;
}

namespace {

Tensor gather_rows(const Tensor& data, const std::vector<int64_t>& idx) {
  const int64_t d = data.dim(1);
  Tensor out({static_cast<int64_t>(idx.size()), d});
  for (size_t i = 0; i < idx.size(); ++i)
    std::copy_n(data.data() + idx[i] * d, d, out.data() + static_cast<int64_t>(i) * d);
  return out;
}

void train_supervised(Model& model, const Tensor& x, const std::vector<data::Stage>& y,
                      const FinetuneBudget& budget, uint64_t seed,
                      const std::vector<float>& class_weights, std::vector<double>* trace,
                      int64_t* steps) {
  nn::Adam opt(model.params().trainable(), static_cast<float>(budget.lr),
               static_cast<float>(budget.weight_decay));
  Rng dropout_rng(seed, "finetune.dropout");
  const int64_t n = x.dim(0);
  std::vector<int64_t> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  for (int64_t epoch = 0; epoch < budget.epochs; ++epoch) {
    Rng shuffle_rng(seed, "finetune.epoch." + std::to_string(epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng.engine());
    double sum = 0.0;
    int64_t batches = 0;
    for (int64_t start = 0; start < n; start += budget.batch) {
      const int64_t stop = std::min(n, start + budget.batch);
      std::vector<int64_t> idx(order.begin() + start, order.begin() + stop);
      Tensor batch = gather_rows(x, idx);
      std::vector<int> labels(idx.size());
      for (size_t i = 0; i < idx.size(); ++i)
        labels[i] = static_cast<int>(y[static_cast<size_t>(idx[i])]);
      opt.zero_grad();
      nn::Fwd ctx{true, &dropout_rng};
      Var loss = nn::cross_entropy(model.logits_forward(batch, ctx), labels, class_weights);
      if (!std::isfinite(loss->value[0]))
        throw std::runtime_error("finetune: diverged (non-finite loss)");
      nn::backward(loss);
      opt.step();
      sum += loss->value[0];
      ++batches;
      if (steps) ++(*steps);
    }
    if (trace) trace->push_back(batches > 0 ? sum / static_cast<double>(batches) : 0.0);
  }
}

}  // namespace

FinetuneResult finetune(const std::optional<models::Checkpoint>& encoder, const ModelSpec& spec,
                        const Tensor& x, const std::vector<data::Stage>& y,
                        const FinetuneBudget& budget, uint64_t seed,
                        const std::vector<float>& class_weights) {
  if (x.rank() != 2 || x.dim(0) == 0) throw std::invalid_argument("finetune: empty label set");
  if (static_cast<int64_t>(y.size()) != x.dim(0))
    throw std::invalid_argument("finetune: labels length mismatch");
  FinetuneResult out{Model(spec, Rng::mix(seed, 0xf17eull)), {}, 0};
  if (encoder) models::load_encoder(out.model, *encoder);
  train_supervised(out.model, x, y, budget, seed, class_weights, &out.epoch_loss, &out.steps);
  return out;
}

FinetuneResult two_stage_train(const std::optional<models::Checkpoint>& encoder,
                               const ModelSpec& spec, const Tensor& x,
                               const std::vector<data::Stage>& y, const FinetuneBudget& budget,
                               uint64_t seed) {
  if (x.rank() != 2 || x.dim(0) == 0)
    throw std::invalid_argument("two_stage_train: empty label set");
  // Stage 1: oversampled balanced copy of the labeled set.
  std::vector<data::EpochRef> refs;
  for (int64_t i = 0; i < x.dim(0); ++i) refs.push_back({"_", i, y[static_cast<size_t>(i)]});
  std::vector<data::EpochRef> balanced =
      data::oversample_balanced(refs, Rng::mix(seed, 0x0512ull));
  std::vector<int64_t> idx;
  std::vector<data::Stage> yb;
  for (const auto& r : balanced) {
    idx.push_back(r.epoch_index);
    yb.push_back(r.label);
  }
  Tensor xb = gather_rows(x, idx);

  FinetuneResult out{Model(spec, Rng::mix(seed, 0xf17eull)), {}, 0};
  if (encoder) models::load_encoder(out.model, *encoder);
  train_supervised(out.model, xb, yb, budget, Rng::mix(seed, 0x57a1ull), {}, &out.epoch_loss,
                   &out.steps);
  // Stage 2: continue on the original imbalanced labels.
  train_supervised(out.model, x, y, budget, Rng::mix(seed, 0x57a2ull), {}, &out.epoch_loss,
                   &out.steps);
  return out;
}

// ---------------------------------------------------------------- experiments

namespace {

json metrics_to_json(const MetricsBundle& m) {
  json conf = json::array();
  for (const auto& row : m.confusion) conf.push_back(row);
  return {{"accuracy", m.accuracy},   {"macro_f1", m.macro_f1},
          {"per_class_f1", m.per_class_f1}, {"confusion", conf},
          {"n_eval", m.n_eval}};
}

MetricsBundle metrics_from_json(const json& j) {
  MetricsBundle m;
  m.accuracy = j.at("accuracy").get<double>();
  m.macro_f1 = j.at("macro_f1").get<double>();
  for (int c = 0; c < data::kNumStages; ++c) {
    m.per_class_f1[static_cast<size_t>(c)] = j.at("per_class_f1").at(c).get<double>();
    for (int k = 0; k < data::kNumStages; ++k)
      m.confusion[static_cast<size_t>(c)][static_cast<size_t>(k)] =
          j.at("confusion").at(c).at(k).get<int64_t>();
  }
  m.n_eval = j.at("n_eval").get<int64_t>();
  return m;
}

void aggregate(RunResult& r) {
  std::vector<double> accs, mf1s;
  for (const auto& f : r.folds)
    if (f.error.empty()) {
      accs.push_back(f.metrics.accuracy);
      mf1s.push_back(f.metrics.macro_f1);
    }
  auto mean_of = [](const std::vector<double>& v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  };
  auto std_of = [&](const std::vector<double>& v, double mean) {
    if (v.size() < 2) return 0.0;
    double acc = 0.0;
    for (double x : v) acc += (x - mean) * (x - mean);
    return std::sqrt(acc / static_cast<double>(v.size()));
  };
  r.mean_acc = mean_of(accs);
  r.std_acc = std_of(accs, r.mean_acc);
  r.mean_mf1 = mean_of(mf1s);
  r.std_mf1 = std_of(mf1s, r.mean_mf1);
}

// One fold of the cross-validation protocol; also used (with explicit train
// and test subject sets) by the transfer experiment.
FoldOutcome run_unit(const ExperimentConfig& cfg, DatasetStore& store,
                     const std::vector<std::string>& train_ids,
                     const std::vector<std::string>& test_ids, int fold,
                     const std::filesystem::path& work_dir) {
  FoldOutcome out;
  const std::string tag = "#fold" + std::to_string(fold);
  const uint64_t fold_seed = Rng::mix(cfg.seed, static_cast<uint64_t>(fold) + 0xf01d);

  std::optional<models::Checkpoint> encoder;
  if (is_ssl(cfg.algorithm)) {
    std::vector<data::EpochRef> train_refs = store.refs_for_subjects(train_ids, "pretrain" + tag);
    if (cfg.imbalance == ImbalanceMode::OversamplePretext)
      train_refs = data::oversample_balanced(train_refs, Rng::mix(fold_seed, 0x0bull));
    auto [px, py] = store.epochs_for_refs(train_refs, "pretrain" + tag);
    Model pre_model(cfg.model, fold_seed);
    std::filesystem::path trace;
    if (!work_dir.empty()) {
      std::filesystem::create_directories(work_dir);
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%016llx",
                    static_cast<unsigned long long>(cfg.config_hash()));
      trace = work_dir / ("trace_" + std::string(buf) + "_fold" + std::to_string(fold) + ".csv");
    }
    pretext::PretrainResult pr = pretext::pretrain(
        pre_model, pretext_algo(cfg.algorithm), px, cfg.pretrain_budget, cfg.pretext_cfg,
        Rng::mix(fold_seed, 0x97e7ull), trace);
    out.pretrain_trace = pr.epoch_loss;
    encoder = std::move(pr.encoder);
    if (!work_dir.empty()) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%016llx",
                    static_cast<unsigned long long>(cfg.config_hash()));
      const auto p = work_dir / ("encoder_" + std::string(buf) + "_fold" +
                                 std::to_string(fold) + ".ckpt");
      encoder->save(p);
      out.checkpoint_path = p.string();
    }
  }

  std::vector<data::EpochRef> labeled_refs = store.refs_for_subjects(train_ids, "finetune" + tag);
  data::LabelBudget budget = data::select_label_fraction(labeled_refs, cfg.label_fraction,
                                                         Rng::mix(cfg.seed, 0x1abe1ull));
  auto [lx, ly] = store.epochs_for_refs(budget.selected, "finetune" + tag);

  FinetuneResult ft = [&] {
    switch (cfg.imbalance) {
      case ImbalanceMode::ClassAwareLoss: {
        auto counts = data::count_labels(budget.selected);
        // A class absent at this budget falls back to plain CE weights.
        bool all_present = true;
        for (int64_t c : counts) all_present = all_present && c > 0;
        return finetune(encoder, cfg.model, lx, ly, cfg.finetune_budget, fold_seed,
                        all_present ? class_aware_weights(counts) : std::vector<float>{});
      }
      case ImbalanceMode::TwoStage:
        return two_stage_train(encoder, cfg.model, lx, ly, cfg.finetune_budget, fold_seed);
      default:
        return finetune(encoder, cfg.model, lx, ly, cfg.finetune_budget, fold_seed);
    }
  }();
  out.finetune_trace = ft.epoch_loss;

  auto [tx, ty] = store.epochs_for_subjects(test_ids, "evaluate" + tag);
  out.metrics = evaluate(ft.model, tx, ty);
  return out;
}

}  // namespace

RunResult run_experiment(const ExperimentConfig& cfg_in, DatasetStore& store,
                         const std::filesystem::path& work_dir) {
  ExperimentConfig cfg = cfg_in;
  cfg.resolve_te();
  cfg.model.validate();
  const auto t0 = std::chrono::steady_clock::now();

  RunResult r;
  r.config_json = cfg.to_json();
  r.config_hash = cfg.config_hash();
  data::FoldPlan plan = data::make_fold_plan(store.manifest(), cfg.folds, cfg.seed);
  r.folds.resize(static_cast<size_t>(cfg.folds));
  for (int fold = 0; fold < cfg.folds; ++fold) {
    const auto& test_ids = plan.folds[static_cast<size_t>(fold)];
    const auto train_ids = plan.train_subjects(fold, store.manifest());
    try {
      r.folds[static_cast<size_t>(fold)] =
          run_unit(cfg, store, train_ids, test_ids, fold, work_dir);
    } catch (const std::exception& e) {
      r.folds[static_cast<size_t>(fold)].error =
          "fold " + std::to_string(fold) + ": " + e.what();
    }
  }
  // Test subjects of fold i legitimately train in other folds, so isolation
  // is checked per fold via the #fold phase tags.
  r.subject_isolation_ok = true;
  for (int fold = 0; fold < cfg.folds; ++fold)
    r.subject_isolation_ok = r.subject_isolation_ok &&
                             store.fold_isolated(plan.folds[static_cast<size_t>(fold)], fold);
  aggregate(r);
  r.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

RunResult transfer_experiment(const ExperimentConfig& cfg_in, DatasetStore& store,
                              const std::filesystem::path& work_dir) {
  ExperimentConfig cfg = cfg_in;
  cfg.resolve_te();
  if (cfg.source_subject.empty() || cfg.target_subject.empty())
    throw std::invalid_argument("transfer_experiment: source and target subjects required");
  if (cfg.source_subject == cfg.target_subject)
    throw std::invalid_argument("transfer_experiment: source and target must differ");
  const auto t0 = std::chrono::steady_clock::now();
  RunResult r;
  cfg.folds = 1;
  r.config_json = cfg.to_json();
  r.config_hash = cfg.config_hash();
  r.folds.resize(1);
  try {
    r.folds[0] = run_unit(cfg, store, {cfg.source_subject}, {cfg.target_subject}, 0, work_dir);
  } catch (const std::exception& e) {
    r.folds[0].error = e.what();
  }
  r.subject_isolation_ok = store.fold_isolated({cfg.target_subject}, 0);
  aggregate(r);
  r.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

// ---------------------------------------------------------------- persistence

std::string RunResult::to_json() const {
  json folds_json = json::array();
  for (const auto& f : folds) {
    folds_json.push_back({{"metrics", f.error.empty() ? metrics_to_json(f.metrics) : json()},
                          {"pretrain_trace", f.pretrain_trace},
                          {"finetune_trace", f.finetune_trace},
                          {"checkpoint", f.checkpoint_path},
                          {"error", f.error}});
  }
  json j = {{"config_hash", config_hash},
            {"config", json::parse(config_json)},
            {"folds", folds_json},
            {"mean", {{"accuracy", mean_acc}, {"macro_f1", mean_mf1}}},
            {"std", {{"accuracy", std_acc}, {"macro_f1", std_mf1}}},
            {"wall_time_s", wall_time_s},
            {"subject_isolation_ok", subject_isolation_ok}};
  return j.dump();
}

RunResult RunResult::from_json(const std::string& text) {
  json j = json::parse(text);
  RunResult r;
  r.config_hash = j.at("config_hash").get<uint64_t>();
  r.config_json = j.at("config").dump();
  for (const auto& f : j.at("folds")) {
    FoldOutcome fo;
    fo.error = f.at("error").get<std::string>();
    if (fo.error.empty()) fo.metrics = metrics_from_json(f.at("metrics"));
    fo.pretrain_trace = f.at("pretrain_trace").get<std::vector<double>>();
    fo.finetune_trace = f.at("finetune_trace").get<std::vector<double>>();
    fo.checkpoint_path = f.at("checkpoint").get<std::string>();
    r.folds.push_back(std::move(fo));
  }
  r.mean_acc = j.at("mean").at("accuracy").get<double>();
  r.mean_mf1 = j.at("mean").at("macro_f1").get<double>();
  r.std_acc = j.at("std").at("accuracy").get<double>();
  r.std_mf1 = j.at("std").at("macro_f1").get<double>();
  r.wall_time_s = j.at("wall_time_s").get<double>();
  r.subject_isolation_ok = j.at("subject_isolation_ok").get<bool>();
  return r;
}

void append_result(const std::filesystem::path& jsonl, const RunResult& r) {
  std::ofstream f(jsonl, std::ios::app);
  if (!f) throw std::runtime_error("results: cannot append to " + jsonl.string());
  f << r.to_json() << "\n";
}

std::vector<RunResult> load_results(const std::filesystem::path& jsonl) {
  std::ifstream f(jsonl);
  if (!f) throw std::runtime_error("results: cannot open " + jsonl.string());
  std::vector<RunResult> out;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    out.push_back(RunResult::from_json(line));
  }
  return out;
}

bool has_result(const std::filesystem::path& jsonl, uint64_t config_hash) {
  std::ifstream f(jsonl);
  if (!f) return false;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    if (RunResult::from_json(line).config_hash == config_hash) return true;
  }
  return false;
}

}  // namespace sleepssl::harness
