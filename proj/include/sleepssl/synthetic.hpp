#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>

#include "sleepssl/dataio.hpp"

namespace sleepssl::harness {

// One per-class signal generator: a dominant oscillation with an amplitude
// envelope plus additive noise. Classes separate by base frequency.
struct ClassGenerator {
  double base_freq_hz = 0.5;
  double amp_lo = 0.6, amp_hi = 1.4;  // per-epoch amplitude ~ U(lo, hi)
  int envelope = 0;                   // 0 flat, 1 rising ramp, 2 falling ramp, 3 hann, 4 double-hump
};

struct SyntheticSpec {
  std::string name = "synthetic";
  int n_subjects = 10;
  int64_t epochs_per_subject = 500;
  int64_t sampling_rate_hz = 4;
  // Sleep-EDF class priors from the dataset table.
  std::array<double, data::kNumStages> priors = {0.196, 0.066, 0.421, 0.135, 0.182};
  std::array<ClassGenerator, data::kNumStages> generators = {
      ClassGenerator{0.25, 0.6, 1.4, 0},  // W
      ClassGenerator{0.45, 0.6, 1.4, 1},  // N1
      ClassGenerator{0.70, 0.6, 1.4, 2},  // N2
      ClassGenerator{1.00, 0.6, 1.4, 3},  // N3
      ClassGenerator{1.40, 0.6, 1.4, 4},  // REM
  };
  double noise_sigma = 0.5;
  // Per-subject fractional frequency offset; subject s gets a deterministic
  // offset in [-shift, +shift]. Zero disables the domain shift.
  double subject_shift = 0.0;
  uint64_t seed = 1;
};

// Writes <out_dir>/s00.ssb.. plus manifest.json; label sequences realize the
// priors exactly (rounded allocation, seeded order shuffle). Fully seeded.
data::DatasetManifest generate_synthetic(const SyntheticSpec& spec,
                                         const std::filesystem::path& out_dir);

// One subject's records in memory (no files); used by transfer tests.
data::SubjectRecord synthesize_subject(const SyntheticSpec& spec, int subject_index);

}  // namespace sleepssl::harness
