#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sleepssl/tensor.hpp"

namespace sleepssl::aug {

// The four registered transformation kinds. The enum order fixes the
// pseudo-label assignment used by the transformation-classification pretext
// task (bijective: label = kind index).
enum class Kind : int { Noise = 0, TimeShift = 1, Negate = 2, Permute = 3 };
inline constexpr int kNumKinds = 4;
const char* kind_name(Kind k);

struct AugmentationSpec {
  Kind kind = Kind::Noise;
  double noise_sigma = 0.8;
  double shift_fraction = 0.2;
  int n_segments = 5;
  uint64_t seed = 0;

  std::string describe() const;  // e.g. "noise(sigma=0.8,seed=7)"
};

// Batches are [n, epoch_len]; every transform preserves shape and finiteness
// and is a pure function of (input, params, seed).
Tensor add_noise(const Tensor& x, double sigma, uint64_t seed);
Tensor time_shift_rotate(const Tensor& x, double fraction = 0.2);
Tensor negate(const Tensor& x);
Tensor permute_segments(const Tensor& x, int n_segments, uint64_t seed);

Tensor apply(const Tensor& x, const AugmentationSpec& spec);

struct ViewPair {
  Tensor view_a, view_b;
  std::vector<AugmentationSpec> recipe_a, recipe_b;
};

enum class ViewMode { SimClr, TsTcc };
ViewMode view_mode_from_string(const std::string& s);  // throws on unknown mode

struct ViewConfig {
  double noise_sigma = 0.8;       // strong / simclr jitter
  double weak_noise_sigma = 0.4;  // tstcc weak jitter
  double weak_scale_sigma = 0.1;  // tstcc weak per-signal scaling ~ N(1, sigma)
  double shift_fraction = 0.2;
  int n_segments = 5;
};

// simclr: both views from the same noise(time_shift(x)) pipeline with
// per-view seeds. tstcc: weak = scale(jitter_0.4(x)), strong =
// permute(jitter_0.8(x)). Recipes record what was applied, in order.
ViewPair make_view_pair(const Tensor& x, ViewMode mode, uint64_t seed,
                        const ViewConfig& cfg = {});

}  // namespace sleepssl::aug
