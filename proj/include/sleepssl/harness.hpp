#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "sleepssl/dataio.hpp"
#include "sleepssl/metrics.hpp"
#include "sleepssl/models.hpp"
#include "sleepssl/pretext.hpp"

namespace sleepssl::harness {

enum class Algorithm { Supervised, ClsTran, SimClr, Cpc, TsTcc };
Algorithm algorithm_from_string(const std::string& s);
std::string to_string(Algorithm a);
bool is_ssl(Algorithm a);
pretext::Algo pretext_algo(Algorithm a);  // throws for Supervised

enum class ImbalanceMode { None, OversamplePretext, ClassAwareLoss, TwoStage };
ImbalanceMode imbalance_from_string(const std::string& s);
std::string to_string(ImbalanceMode m);

enum class TeMode { Native, Swapped, None };
TeMode te_mode_from_string(const std::string& s);
std::string to_string(TeMode m);

struct FinetuneBudget {
  int64_t epochs = 40;
  int64_t batch = 128;
  double lr = 1e-3;
  double weight_decay = 1e-4;
};

// One fully seeded run. Everything is explicit after resolution; the
// persisted record and its hash are derived from the resolved JSON.
struct ExperimentConfig {
  std::string dataset_name;  // informational, from the manifest
  std::string manifest_path;
  models::ModelSpec model;
  Algorithm algorithm = Algorithm::Supervised;
  double label_fraction = 1.0;
  int folds = 5;
  uint64_t seed = 42;
  pretext::TrainBudget pretrain_budget;
  FinetuneBudget finetune_budget;
  ImbalanceMode imbalance = ImbalanceMode::None;
  TeMode te_mode = TeMode::Native;
  pretext::PretextConfig pretext_cfg;
  // Set for cross-subject transfer runs; empty otherwise.
  std::string source_subject, target_subject;

  // Applies te_mode to model.te (native/swapped per backbone, or identity).
  void resolve_te();
  std::string to_json() const;
  static ExperimentConfig from_json(const std::string& text);
  uint64_t config_hash() const;  // FNV-1a over the resolved JSON
};

// On-demand subject loading with an access audit: every read is tagged with
// the phase that asked for it, which is how subject isolation is enforced.
class DatasetStore {
 public:
  explicit DatasetStore(const std::filesystem::path& manifest_path);
  const data::DatasetManifest& manifest() const { return manifest_; }

  struct Access {
    std::string phase;
    std::string subject_id;
  };

  const data::SubjectRecord& subject(const std::string& id, const std::string& phase);
  std::pair<Tensor, std::vector<data::Stage>> epochs_for_subjects(
      const std::vector<std::string>& ids, const std::string& phase);
  std::pair<Tensor, std::vector<data::Stage>> epochs_for_refs(
      const std::vector<data::EpochRef>& refs, const std::string& phase);
  std::vector<data::EpochRef> refs_for_subjects(const std::vector<std::string>& ids,
                                                const std::string& phase);

  std::vector<Access> audit_log() const;
  // True when none of `ids` was touched outside the "evaluate" phase.
  bool only_evaluated(const std::vector<std::string>& ids) const;
  // Scoped variant: considers only accesses tagged "#fold<fold>".
  bool fold_isolated(const std::vector<std::string>& ids, int fold) const;

 private:
  data::DatasetManifest manifest_;
  std::filesystem::path base_dir_;
  mutable std::mutex mu_;
  std::map<std::string, data::SubjectRecord> cache_;
  std::vector<Access> log_;
};

// weight_c ∝ (N_total / n_c)^beta, normalized to mean 1.
std::vector<float> class_aware_weights(const std::array<int64_t, data::kNumStages>& counts,
                                       double beta = 0.5);

struct FinetuneResult {
  models::Model model;
  std::vector<double> epoch_loss;
  int64_t steps = 0;
};

// phi from the checkpoint (or random when absent), te and classifier fresh;
// all parameters update end-to-end under weighted cross-entropy.
FinetuneResult finetune(const std::optional<models::Checkpoint>& encoder,
                        const models::ModelSpec& spec, const Tensor& x,
                        const std::vector<data::Stage>& y, const FinetuneBudget& budget,
                        uint64_t seed, const std::vector<float>& class_weights = {});

// Phase 1 on an oversampled balanced copy, phase 2 on the original labels;
// each phase runs the full budget.
FinetuneResult two_stage_train(const std::optional<models::Checkpoint>& encoder,
                               const models::ModelSpec& spec, const Tensor& x,
                               const std::vector<data::Stage>& y, const FinetuneBudget& budget,
                               uint64_t seed);

struct FoldOutcome {
  MetricsBundle metrics;
  std::vector<double> pretrain_trace;
  std::vector<double> finetune_trace;
  std::string checkpoint_path;  // encoder checkpoint, SSL runs only
  std::string error;            // non-empty when the fold failed
};

struct RunResult {
  uint64_t config_hash = 0;
  std::string config_json;
  std::vector<FoldOutcome> folds;
  double mean_acc = 0.0, std_acc = 0.0;
  double mean_mf1 = 0.0, std_mf1 = 0.0;
  double wall_time_s = 0.0;
  bool subject_isolation_ok = true;

  std::string to_json() const;
  static RunResult from_json(const std::string& text);
};

// Full protocol for one config: per fold, optional pretraining on the fold's
// train subjects, label-budget selection, fine-tuning, evaluation on the test
// subjects. Fold failures are recorded and do not abort the run.
RunResult run_experiment(const ExperimentConfig& cfg, DatasetStore& store,
                         const std::filesystem::path& work_dir = {});

// Source-only training (supervised or SSL-pretrained), evaluation on the
// untouched target subject.
RunResult transfer_experiment(const ExperimentConfig& cfg, DatasetStore& store,
                              const std::filesystem::path& work_dir = {});

// ---- results persistence (append-only JSONL keyed by config hash) ----
void append_result(const std::filesystem::path& jsonl, const RunResult& r);
std::vector<RunResult> load_results(const std::filesystem::path& jsonl);
bool has_result(const std::filesystem::path& jsonl, uint64_t config_hash);

}  // namespace sleepssl::harness
