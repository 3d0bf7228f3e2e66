#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sleepssl/tensor.hpp"

namespace sleepssl::data {

// The five AASM stages, encoded 0..4 everywhere downstream of preprocessing.
enum class Stage : uint8_t { W = 0, N1 = 1, N2 = 2, N3 = 3, REM = 4 };
inline constexpr int kNumStages = 5;
inline constexpr const char* kStageNames[kNumStages] = {"W", "N1", "N2", "N3", "REM"};

Stage stage_from_byte(uint8_t b);  // throws on b > 4

struct SubjectRecord {
  std::string subject_id;
  int64_t sampling_rate_hz = 0;
  int64_t epoch_len = 0;  // samples per 30-s epoch = 30 * sampling_rate_hz
  std::string channel;
  Tensor epochs;  // [n_epochs, epoch_len]
  std::vector<Stage> labels;

  int64_t n_epochs() const { return epochs.rank() == 2 ? epochs.dim(0) : 0; }
  void validate() const;  // throws on any invariant violation
};

struct ManifestEntry {
  std::string subject_id;
  std::string path;  // subject .ssb file, relative to the manifest or absolute
  int64_t n_epochs = 0;
};

struct DatasetManifest {
  std::string name;
  std::string channel;
  int64_t sampling_rate_hz = 0;
  std::vector<ManifestEntry> subjects;
  std::array<int64_t, kNumStages> class_counts{};

  static DatasetManifest load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
  std::vector<std::string> subject_ids() const;
};

struct FoldPlan {
  int k = 5;
  uint64_t seed = 0;
  std::vector<std::vector<std::string>> folds;  // test-subject sets, disjoint

  std::vector<std::string> train_subjects(int fold, const DatasetManifest& m) const;
};

struct EpochRef {
  std::string subject_id;
  int64_t epoch_index = 0;
  Stage label = Stage::W;
};

struct LabelBudget {
  double fraction = 1.0;
  uint64_t seed = 0;
  std::vector<EpochRef> selected;
};

// ---- on-disk subject format ----
// <id>.ssb: n_epochs*epoch_len little-endian float32 samples, then n_epochs
// uint8 labels. Sidecar <id>.ssb.json: subject_id, sampling_rate_hz,
// epoch_len, n_epochs, channel.
void store_subject(const SubjectRecord& record, const std::filesystem::path& path);
SubjectRecord load_subject(const std::filesystem::path& path);

// Same payload layout but labels are raw scheme codes awaiting map_to_aasm;
// no 0..4 validation. Used by the ingest pipeline.
std::pair<SubjectRecord, std::vector<int>> load_subject_raw(const std::filesystem::path& path);

// ---- preprocessing ----
// Keeps epochs [max(0, f-60) .. min(end, l+60)] around the first/last non-W
// epoch, 60 = max_lead_minutes * 2 thirty-second epochs.
SubjectRecord trim_wake(const SubjectRecord& record, int max_lead_minutes = 30);

struct AasmMapping {
  std::vector<Stage> stages;       // mapped labels with dropped epochs removed
  std::vector<bool> drop_mask;     // true where the raw epoch must be dropped
};
AasmMapping map_to_aasm(const std::vector<int>& raw_labels, const std::string& scheme);
bool scheme_registered(const std::string& scheme);

// ---- fold planning and label budgets ----
FoldPlan make_fold_plan(const DatasetManifest& manifest, int k, uint64_t seed);

// Stratified per-class sampling without replacement; budgets are nested
// across fractions for a fixed seed (per-class shuffle + prefix take).
LabelBudget select_label_fraction(const std::vector<EpochRef>& train_epochs, double fraction,
                                  uint64_t seed);

// Duplicates minority-class epochs (seeded, with replacement) until all class
// counts present in the input equal the majority count.
std::vector<EpochRef> oversample_balanced(const std::vector<EpochRef>& train_epochs,
                                          uint64_t seed);

std::array<int64_t, kNumStages> count_labels(const std::vector<EpochRef>& refs);

}  // namespace sleepssl::data
