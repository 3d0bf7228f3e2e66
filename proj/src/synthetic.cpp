#include "sleepssl/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "sleepssl/rng.hpp"

namespace sleepssl::harness {

namespace {

constexpr double kPi = 3.14159265358979323846;

double envelope_at(int kind, double u) {  // u in [0,1)
  switch (kind) {
    case 1: return 0.4 + 0.6 * u;
    case 2: return 1.0 - 0.6 * u;
    case 3: return 0.3 + 0.7 * std::sin(kPi * u) * std::sin(kPi * u);
    case 4: return 0.4 + 0.6 * std::abs(std::sin(2.0 * kPi * u));
    default: return 1.0;
  }
}

// Class sequence realizing the priors exactly: rounded per-class allocation
// with largest-remainder top-up, then a seeded order shuffle.
std::vector<data::Stage> label_sequence(const SyntheticSpec& spec, Rng& rng) {
  double sum = 0.0;
  for (double p : spec.priors) sum += p;
  if (std::abs(sum - 1.0) > 1e-6)
    throw std::invalid_argument("generate_synthetic: priors must sum to 1");
  const int64_t n = spec.epochs_per_subject;
  std::array<int64_t, data::kNumStages> counts{};
  std::array<double, data::kNumStages> remainder{};
  int64_t assigned = 0;
  for (int c = 0; c < data::kNumStages; ++c) {
    const double exact = spec.priors[static_cast<size_t>(c)] * static_cast<double>(n);
    counts[static_cast<size_t>(c)] = static_cast<int64_t>(std::floor(exact));
    remainder[static_cast<size_t>(c)] = exact - std::floor(exact);
    assigned += counts[static_cast<size_t>(c)];
  }
  while (assigned < n) {
    int best = 0;
    for (int c = 1; c < data::kNumStages; ++c)
      if (remainder[static_cast<size_t>(c)] > remainder[static_cast<size_t>(best)]) best = c;
    counts[static_cast<size_t>(best)]++;
    remainder[static_cast<size_t>(best)] = -1.0;
    ++assigned;
  }
  std::vector<data::Stage> labels;
  labels.reserve(static_cast<size_t>(n));
  for (int c = 0; c < data::kNumStages; ++c)
    labels.insert(labels.end(), static_cast<size_t>(counts[static_cast<size_t>(c)]),
                  static_cast<data::Stage>(c));
  std::shuffle(labels.begin(), labels.end(), rng.engine());
  return labels;
}

}  // namespace

data::SubjectRecord synthesize_subject(const SyntheticSpec& spec, int subject_index) {
  const int64_t len = 30 * spec.sampling_rate_hz;
  Rng rng(spec.seed, "synthetic.subject." + std::to_string(subject_index));
  data::SubjectRecord rec;
  char id[16];
  std::snprintf(id, sizeof(id), "s%02d", subject_index);
  rec.subject_id = id;
  rec.sampling_rate_hz = spec.sampling_rate_hz;
  rec.epoch_len = len;
  rec.channel = "synthetic";
  rec.labels = label_sequence(spec, rng);
  const int64_t n = static_cast<int64_t>(rec.labels.size());
  rec.epochs = Tensor({n, len});

  // Deterministic per-subject frequency offset; evenly spread across
  // subjects so scenario pairs see a real shift.
  double offset = 0.0;
  if (spec.subject_shift != 0.0 && spec.n_subjects > 1) {
    const double u = static_cast<double>(subject_index) /
                     static_cast<double>(spec.n_subjects - 1);
    offset = spec.subject_shift * (2.0 * u - 1.0);
  }

  const double dt = 1.0 / static_cast<double>(spec.sampling_rate_hz);
  for (int64_t e = 0; e < n; ++e) {
    const auto& gen = spec.generators[static_cast<size_t>(rec.labels[static_cast<size_t>(e)])];
    const double amp = rng.uniform(static_cast<float>(gen.amp_lo),
                                   static_cast<float>(gen.amp_hi));
    const double phase = rng.uniform(0.0f, static_cast<float>(2.0 * kPi));
    const double freq = gen.base_freq_hz * (1.0 + offset);
    float* row = rec.epochs.data() + e * len;
    for (int64_t t = 0; t < len; ++t) {
      const double u = static_cast<double>(t) / static_cast<double>(len);
      double v = amp * envelope_at(gen.envelope, u) *
                 std::sin(2.0 * kPi * freq * static_cast<double>(t) * dt + phase);
      if (spec.noise_sigma > 0.0) v += rng.normal(0.0f, static_cast<float>(spec.noise_sigma));
      row[t] = static_cast<float>(v);
    }
  }
  return rec;
}

data::DatasetManifest generate_synthetic(const SyntheticSpec& spec,
                                         const std::filesystem::path& out_dir) {
  if (spec.n_subjects < 1 || spec.epochs_per_subject < 1 || spec.sampling_rate_hz < 1)
    throw std::invalid_argument("generate_synthetic: bad size parameters");
  std::filesystem::create_directories(out_dir);
  data::DatasetManifest m;
  m.name = spec.name;
  m.channel = "synthetic";
  m.sampling_rate_hz = spec.sampling_rate_hz;
  for (int s = 0; s < spec.n_subjects; ++s) {
    data::SubjectRecord rec = synthesize_subject(spec, s);
    const std::string fname = rec.subject_id + ".ssb";
    data::store_subject(rec, out_dir / fname);
    m.subjects.push_back({rec.subject_id, fname, rec.n_epochs()});
    for (data::Stage st : rec.labels) m.class_counts[static_cast<size_t>(st)]++;
  }
  m.save(out_dir / "manifest.json");
  return m;
}

}  // namespace sleepssl::harness
