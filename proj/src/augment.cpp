#include "sleepssl/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "sleepssl/rng.hpp"

namespace sleepssl::aug {

const char* kind_name(Kind k) {
  switch (k) {
    case Kind::Noise: return "noise";
    case Kind::TimeShift: return "time_shift";
    case Kind::Negate: return "negate";
    case Kind::Permute: return "permute";
  }
  return "?";
}

std::string AugmentationSpec::describe() const {
  switch (kind) {
    case Kind::Noise:
      return "noise(sigma=" + std::to_string(noise_sigma) + ",seed=" + std::to_string(seed) + ")";
    case Kind::TimeShift:
      return "time_shift(fraction=" + std::to_string(shift_fraction) + ")";
    case Kind::Negate:
      return "negate()";
    case Kind::Permute:
      return "permute(n_segments=" + std::to_string(n_segments) +
             ",seed=" + std::to_string(seed) + ")";
  }
  return "?";
}

namespace {

void check_batch(const Tensor& x, const char* op) {
  if (x.rank() != 2 || x.dim(0) < 1 || x.dim(1) < 1)
    throw std::invalid_argument(std::string(op) + ": non-empty [n, epoch_len] batch expected");
}

}  // namespace

Tensor add_noise(const Tensor& x, double sigma, uint64_t seed) {
  check_batch(x, "add_noise");
  if (!(sigma > 0.0)) throw std::invalid_argument("add_noise: sigma must be > 0");
  Rng rng(seed, "add_noise");
  Tensor out = x;
  for (int64_t i = 0; i < out.numel(); ++i)
    out[i] += rng.normal(0.0f, static_cast<float>(sigma));
  return out;
}

Tensor time_shift_rotate(const Tensor& x, double fraction) {
  check_batch(x, "time_shift_rotate");
  if (!(fraction > 0.0 && fraction < 1.0))
    throw std::invalid_argument("time_shift_rotate: fraction must be in (0,1)");
  const int64_t n = x.dim(0), len = x.dim(1);
  const int64_t s = std::llround(fraction * static_cast<double>(len));
  Tensor out(x.shape());
  for (int64_t i = 0; i < n; ++i) {
    const float* src = x.data() + i * len;
    float* dst = out.data() + i * len;
    // The final s samples move to the front.
    for (int64_t t = 0; t < len; ++t) dst[(t + s) % len] = src[t];
  }
  return out;
}

Tensor negate(const Tensor& x) {
  Tensor out = x;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = -out[i];
  return out;
}

Tensor permute_segments(const Tensor& x, int n_segments, uint64_t seed) {
  check_batch(x, "permute_segments");
  const int64_t n = x.dim(0), len = x.dim(1);
  if (n_segments < 2 || n_segments > len)
    throw std::invalid_argument("permute_segments: n_segments out of [2, epoch_len]");
  // Contiguous chunks with lengths differing by at most one; the remainder
  // goes to the leading chunks.
  const int64_t base = len / n_segments, rem = len % n_segments;
  std::vector<int64_t> starts(static_cast<size_t>(n_segments) + 1, 0);
  for (int64_t c = 0; c < n_segments; ++c)
    starts[static_cast<size_t>(c + 1)] = starts[static_cast<size_t>(c)] + base + (c < rem ? 1 : 0);
  Tensor out(x.shape());
  for (int64_t i = 0; i < n; ++i) {
    // One independent permutation per signal.
    Rng rng(seed, Rng::mix(0x9d2c5680u, static_cast<uint64_t>(i)));
    std::vector<int> order(static_cast<size_t>(n_segments));
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng.engine());
    const float* src = x.data() + i * len;
    float* dst = out.data() + i * len;
    int64_t w = 0;
    for (int c : order) {
      const int64_t s0 = starts[static_cast<size_t>(c)], s1 = starts[static_cast<size_t>(c) + 1];
      std::copy(src + s0, src + s1, dst + w);
      w += s1 - s0;
    }
  }
  return out;
}

Tensor apply(const Tensor& x, const AugmentationSpec& spec) {
  switch (spec.kind) {
    case Kind::Noise: return add_noise(x, spec.noise_sigma, spec.seed);
    case Kind::TimeShift: return time_shift_rotate(x, spec.shift_fraction);
    case Kind::Negate: return negate(x);
    case Kind::Permute: return permute_segments(x, spec.n_segments, spec.seed);
  }
  throw std::invalid_argument("apply: unknown augmentation kind");
}

ViewMode view_mode_from_string(const std::string& s) {
  if (s == "simclr") return ViewMode::SimClr;
  if (s == "tstcc") return ViewMode::TsTcc;
  throw std::invalid_argument("make_view_pair: unknown mode '" + s + "'");
}

namespace {

Tensor scale_signals(const Tensor& x, double sigma, uint64_t seed) {
  // Per-signal multiplicative factor ~ N(1, sigma); part of the tstcc weak view.
  Rng rng(seed, "view_scale");
  const int64_t n = x.dim(0), len = x.dim(1);
  Tensor out = x;
  for (int64_t i = 0; i < n; ++i) {
    const float f = rng.normal(1.0f, static_cast<float>(sigma));
    float* row = out.data() + i * len;
    for (int64_t t = 0; t < len; ++t) row[t] *= f;
  }
  return out;
}

}  // namespace

ViewPair make_view_pair(const Tensor& x, ViewMode mode, uint64_t seed, const ViewConfig& cfg) {
  check_batch(x, "make_view_pair");
  ViewPair vp;
  if (mode == ViewMode::SimClr) {
    for (int v = 0; v < 2; ++v) {
      const uint64_t sub = Rng::mix(seed, 0x5151u + static_cast<uint64_t>(v));
      AugmentationSpec shift{Kind::TimeShift, cfg.noise_sigma, cfg.shift_fraction,
                             cfg.n_segments, sub};
      AugmentationSpec noise{Kind::Noise, cfg.noise_sigma, cfg.shift_fraction, cfg.n_segments,
                             sub};
      Tensor view = add_noise(time_shift_rotate(x, cfg.shift_fraction), cfg.noise_sigma, sub);
      if (v == 0) {
        vp.view_a = std::move(view);
        vp.recipe_a = {shift, noise};
      } else {
        vp.view_b = std::move(view);
        vp.recipe_b = {shift, noise};
      }
    }
  } else {  // TsTcc: weak jitter+scale view, strong jitter+permutation view
    const uint64_t weak_seed = Rng::mix(seed, 0x3eacull);
    const uint64_t strong_seed = Rng::mix(seed, 0x5720ull);
    AugmentationSpec weak_noise{Kind::Noise, cfg.weak_noise_sigma, cfg.shift_fraction,
                                cfg.n_segments, weak_seed};
    vp.view_a = scale_signals(add_noise(x, cfg.weak_noise_sigma, weak_seed),
                              cfg.weak_scale_sigma, weak_seed);
    vp.recipe_a = {weak_noise};
    AugmentationSpec strong_noise{Kind::Noise, cfg.noise_sigma, cfg.shift_fraction,
                                  cfg.n_segments, strong_seed};
    AugmentationSpec strong_perm{Kind::Permute, cfg.noise_sigma, cfg.shift_fraction,
                                 cfg.n_segments, strong_seed};
    vp.view_b = permute_segments(add_noise(x, cfg.noise_sigma, strong_seed), cfg.n_segments,
                                 strong_seed);
    vp.recipe_b = {strong_noise, strong_perm};
  }
  return vp;
}

}  // namespace sleepssl::aug
