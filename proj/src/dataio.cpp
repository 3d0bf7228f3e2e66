#include "sleepssl/dataio.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <map>
#include <stdexcept>

#include "json.hpp"
#include "sleepssl/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "subject files are little-endian; big-endian hosts need byte swaps");

namespace sleepssl::data {

using nlohmann::json;

Stage stage_from_byte(uint8_t b) {
  if (b > 4) throw std::runtime_error("invalid stage byte " + std::to_string(int(b)));
  return static_cast<Stage>(b);
}

void SubjectRecord::validate() const {
  if (subject_id.empty()) throw std::invalid_argument("SubjectRecord: empty subject_id");
  if (sampling_rate_hz <= 0) throw std::invalid_argument("SubjectRecord: sampling_rate_hz <= 0");
  if (epoch_len != 30 * sampling_rate_hz)
    throw std::invalid_argument("SubjectRecord: epoch_len must be 30 * sampling_rate_hz");
  if (epochs.rank() != 2 || epochs.dim(1) != epoch_len)
    throw std::invalid_argument("SubjectRecord: epochs must be [n_epochs, epoch_len]");
  if (static_cast<int64_t>(labels.size()) != epochs.dim(0))
    throw std::invalid_argument("SubjectRecord: labels length != epoch count");
  for (int64_t i = 0; i < epochs.numel(); ++i)
    if (!std::isfinite(epochs[i]))
      throw std::invalid_argument("SubjectRecord: non-finite sample value");
}

void store_subject(const SubjectRecord& record, const std::filesystem::path& path) {
  record.validate();
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("store_subject: cannot open " + path.string());
  f.write(reinterpret_cast<const char*>(record.epochs.data()),
          static_cast<std::streamsize>(record.epochs.numel() * sizeof(float)));
  std::vector<uint8_t> lb(record.labels.size());
  for (size_t i = 0; i < lb.size(); ++i) lb[i] = static_cast<uint8_t>(record.labels[i]);
  f.write(reinterpret_cast<const char*>(lb.data()), static_cast<std::streamsize>(lb.size()));
  if (!f) throw std::runtime_error("store_subject: write failed for " + path.string());
  f.close();

  json side = {{"subject_id", record.subject_id},
               {"sampling_rate_hz", record.sampling_rate_hz},
               {"epoch_len", record.epoch_len},
               {"n_epochs", record.n_epochs()},
               {"channel", record.channel}};
  std::ofstream sf(path.string() + ".json", std::ios::trunc);
  if (!sf) throw std::runtime_error("store_subject: cannot open sidecar for " + path.string());
  sf << side.dump(2) << "\n";
}

namespace {

struct Sidecar {
  std::string subject_id;
  int64_t sampling_rate_hz, epoch_len, n_epochs;
  std::string channel;
};

Sidecar read_sidecar(const std::filesystem::path& path) {
  std::ifstream sf(path.string() + ".json");
  if (!sf) throw std::runtime_error("load_subject: missing sidecar " + path.string() + ".json");
  json side = json::parse(sf);
  return {side.at("subject_id").get<std::string>(), side.at("sampling_rate_hz").get<int64_t>(),
          side.at("epoch_len").get<int64_t>(), side.at("n_epochs").get<int64_t>(),
          side.value("channel", std::string{})};
}

// Reads the payload and returns raw label bytes; stage validation is up to
// the caller so `ingest` can reuse this for unmapped annotation schemes.
std::pair<SubjectRecord, std::vector<uint8_t>> load_payload(const std::filesystem::path& path) {
  Sidecar sc = read_sidecar(path);
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_subject: cannot open " + path.string());
  f.seekg(0, std::ios::end);
  const int64_t file_size = static_cast<int64_t>(f.tellg());
  f.seekg(0);
  const int64_t expected =
      sc.n_epochs * sc.epoch_len * static_cast<int64_t>(sizeof(float)) + sc.n_epochs;
  if (file_size != expected)
    throw std::runtime_error("load_subject: payload length " + std::to_string(file_size) +
                             " does not match declared n_epochs x epoch_len (expected " +
                             std::to_string(expected) + ")");
  SubjectRecord rec;
  rec.subject_id = sc.subject_id;
  rec.sampling_rate_hz = sc.sampling_rate_hz;
  rec.epoch_len = sc.epoch_len;
  rec.channel = sc.channel;
  rec.epochs = Tensor({sc.n_epochs, sc.epoch_len});
  f.read(reinterpret_cast<char*>(rec.epochs.data()),
         static_cast<std::streamsize>(rec.epochs.numel() * sizeof(float)));
  std::vector<uint8_t> raw_labels(static_cast<size_t>(sc.n_epochs));
  f.read(reinterpret_cast<char*>(raw_labels.data()), sc.n_epochs);
  if (!f) throw std::runtime_error("load_subject: short read on " + path.string());
  return {std::move(rec), std::move(raw_labels)};
}

}  // namespace

SubjectRecord load_subject(const std::filesystem::path& path) {
  auto [rec, raw] = load_payload(path);
  rec.labels.reserve(raw.size());
  for (uint8_t b : raw) rec.labels.push_back(stage_from_byte(b));
  rec.validate();
  return rec;
}

std::pair<SubjectRecord, std::vector<int>> load_subject_raw(const std::filesystem::path& path) {
  auto [rec, raw] = load_payload(path);
  std::vector<int> codes(raw.begin(), raw.end());
  return {std::move(rec), std::move(codes)};
}

SubjectRecord trim_wake(const SubjectRecord& record, int max_lead_minutes) {
  if (record.n_epochs() == 0) throw std::invalid_argument("trim_wake: empty record");
  const auto& labels = record.labels;
  int64_t first = -1, last = -1;
  for (int64_t i = 0; i < static_cast<int64_t>(labels.size()); ++i)
    if (labels[static_cast<size_t>(i)] != Stage::W) {
      if (first < 0) first = i;
      last = i;
    }
  if (first < 0) throw std::runtime_error("trim_wake: subject has no sleep (all W)");
  const int64_t allowance = static_cast<int64_t>(max_lead_minutes) * 2;  // 30-s epochs
  const int64_t lo = std::max<int64_t>(0, first - allowance);
  const int64_t hi = std::min<int64_t>(static_cast<int64_t>(labels.size()) - 1, last + allowance);
  const int64_t n = hi - lo + 1;
  SubjectRecord out = record;
  out.epochs = Tensor({n, record.epoch_len});
  std::copy_n(record.epochs.data() + lo * record.epoch_len, n * record.epoch_len,
              out.epochs.data());
  out.labels.assign(labels.begin() + lo, labels.begin() + hi + 1);
  return out;
}

namespace {

// scheme -> raw code -> mapped stage; absent stage means the epoch is
// dropped, codes outside the table are errors.
const std::map<std::string, std::map<int, std::optional<Stage>>>& scheme_table() {
  static const std::map<std::string, std::map<int, std::optional<Stage>>> table = {
      // AASM-native five-class labels.
      {"aasm",
       {{0, Stage::W}, {1, Stage::N1}, {2, Stage::N2}, {3, Stage::N3}, {4, Stage::REM}}},
      // Rechtschaffen & Kales: S3/S4 merge into N3; MOVEMENT (6) and
      // UNKNOWN (7) are dropped together with their epochs.
      {"rk",
       {{0, Stage::W},
        {1, Stage::N1},
        {2, Stage::N2},
        {3, Stage::N3},
        {4, Stage::N3},
        {5, Stage::REM},
        {6, std::nullopt},
        {7, std::nullopt}}},
  };
  return table;
}

}  // namespace

bool scheme_registered(const std::string& scheme) { return scheme_table().count(scheme) > 0; }

AasmMapping map_to_aasm(const std::vector<int>& raw_labels, const std::string& scheme) {
  auto it = scheme_table().find(scheme);
  if (it == scheme_table().end())
    throw std::invalid_argument("map_to_aasm: unregistered scheme '" + scheme + "'");
  AasmMapping out;
  out.drop_mask.resize(raw_labels.size(), false);
  for (size_t i = 0; i < raw_labels.size(); ++i) {
    auto e = it->second.find(raw_labels[i]);
    if (e == it->second.end())
      throw std::runtime_error("map_to_aasm: no mapping entry for raw code " +
                               std::to_string(raw_labels[i]) + " under scheme '" + scheme + "'");
    if (e->second.has_value())
      out.stages.push_back(*e->second);
    else
      out.drop_mask[i] = true;
  }
  return out;
}

FoldPlan make_fold_plan(const DatasetManifest& manifest, int k, uint64_t seed) {
  const int64_t n = static_cast<int64_t>(manifest.subjects.size());
  if (k < 2) throw std::invalid_argument("make_fold_plan: k must be >= 2");
  if (k > n) throw std::invalid_argument("make_fold_plan: k exceeds subject count");
  std::vector<std::string> ids = manifest.subject_ids();
  Rng rng(seed, "fold_plan");
  std::shuffle(ids.begin(), ids.end(), rng.engine());
  FoldPlan plan;
  plan.k = k;
  plan.seed = seed;
  plan.folds.assign(static_cast<size_t>(k), {});
  for (int64_t i = 0; i < n; ++i)
    plan.folds[static_cast<size_t>(i % k)].push_back(ids[static_cast<size_t>(i)]);
  return plan;
}

std::vector<std::string> FoldPlan::train_subjects(int fold, const DatasetManifest& m) const {
  const auto& test = folds.at(static_cast<size_t>(fold));
  std::vector<std::string> out;
  for (const auto& id : m.subject_ids())
    if (std::find(test.begin(), test.end(), id) == test.end()) out.push_back(id);
  return out;
}

LabelBudget select_label_fraction(const std::vector<EpochRef>& train_epochs, double fraction,
                                  uint64_t seed) {
  if (!(fraction > 0.0) || fraction > 1.0)
    throw std::invalid_argument("select_label_fraction: fraction must be in (0,1]");
  LabelBudget budget;
  budget.fraction = fraction;
  budget.seed = seed;
  // The shuffle is keyed by (seed, class) only, never by fraction, so the 1%
  // pick is a prefix of the 5% pick and label curves nest cleanly.
  for (int c = 0; c < kNumStages; ++c) {
    std::vector<int64_t> idx;
    for (int64_t i = 0; i < static_cast<int64_t>(train_epochs.size()); ++i)
      if (static_cast<int>(train_epochs[static_cast<size_t>(i)].label) == c) idx.push_back(i);
    if (idx.empty()) continue;
    Rng rng(seed, "label_budget." + std::string(kStageNames[c]));
    std::shuffle(idx.begin(), idx.end(), rng.engine());
    int64_t take = std::llround(fraction * static_cast<double>(idx.size()));
    take = std::clamp<int64_t>(take, 1, static_cast<int64_t>(idx.size()));
    for (int64_t i = 0; i < take; ++i)
      budget.selected.push_back(train_epochs[static_cast<size_t>(idx[static_cast<size_t>(i)])]);
  }
  return budget;
}

std::vector<EpochRef> oversample_balanced(const std::vector<EpochRef>& train_epochs,
                                          uint64_t seed) {
  if (train_epochs.empty()) throw std::invalid_argument("oversample_balanced: empty input");
  std::array<std::vector<int64_t>, kNumStages> by_class;
  for (int64_t i = 0; i < static_cast<int64_t>(train_epochs.size()); ++i)
    by_class[static_cast<size_t>(train_epochs[static_cast<size_t>(i)].label)].push_back(i);
  int64_t majority = 0;
  for (const auto& v : by_class) majority = std::max(majority, static_cast<int64_t>(v.size()));
  std::vector<EpochRef> out = train_epochs;  // originals all retained
  for (int c = 0; c < kNumStages; ++c) {
    const auto& idx = by_class[static_cast<size_t>(c)];
    if (idx.empty()) continue;
    Rng rng(seed, "oversample." + std::string(kStageNames[c]));
    for (int64_t need = majority - static_cast<int64_t>(idx.size()); need > 0; --need) {
      const int64_t pick = rng.uniform_int(0, static_cast<int64_t>(idx.size()) - 1);
      out.push_back(train_epochs[static_cast<size_t>(idx[static_cast<size_t>(pick)])]);
    }
  }
  return out;
}

std::array<int64_t, kNumStages> count_labels(const std::vector<EpochRef>& refs) {
  std::array<int64_t, kNumStages> counts{};
  for (const auto& r : refs) counts[static_cast<size_t>(r.label)]++;
  return counts;
}

DatasetManifest DatasetManifest::load(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("manifest: cannot open " + path.string());
  json j = json::parse(f);
  DatasetManifest m;
  m.name = j.at("name").get<std::string>();
  m.channel = j.value("channel", std::string{});
  m.sampling_rate_hz = j.at("sampling_rate_hz").get<int64_t>();
  for (const auto& s : j.at("subjects")) {
    m.subjects.push_back({s.at("subject_id").get<std::string>(), s.at("path").get<std::string>(),
                          s.at("n_epochs").get<int64_t>()});
  }
  const auto& cc = j.at("class_counts");
  for (int c = 0; c < kNumStages; ++c)
    m.class_counts[static_cast<size_t>(c)] = cc.at(kStageNames[c]).get<int64_t>();
  std::vector<std::string> ids = m.subject_ids();
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
    throw std::runtime_error("manifest: duplicate subject ids");
  return m;
}

void DatasetManifest::save(const std::filesystem::path& path) const {
  json subs = json::array();
  for (const auto& s : subjects)
    subs.push_back({{"subject_id", s.subject_id}, {"path", s.path}, {"n_epochs", s.n_epochs}});
  json cc;
  for (int c = 0; c < kNumStages; ++c) cc[kStageNames[c]] = class_counts[static_cast<size_t>(c)];
  json j = {{"name", name},
            {"channel", channel},
            {"sampling_rate_hz", sampling_rate_hz},
            {"subjects", subs},
            {"class_counts", cc}};
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("manifest: cannot write " + path.string());
  f << j.dump(2) << "\n";
}

std::vector<std::string> DatasetManifest::subject_ids() const {
  std::vector<std::string> out;
  out.reserve(subjects.size());
  for (const auto& s : subjects) out.push_back(s.subject_id);
  return out;
}

}  // namespace sleepssl::data
