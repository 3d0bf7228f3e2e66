#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "sleepssl/layers.hpp"
#include "sleepssl/tensor.hpp"

namespace sleepssl::models {

enum class BackboneKind { DeepSleepNet, AttnSleep, Cnn1d };
enum class TeKind { BilstmResidual, CausalAttention, Identity };

BackboneKind backbone_from_string(const std::string& s);
TeKind te_from_string(const std::string& s);
std::string to_string(BackboneKind k);
std::string to_string(TeKind k);

// The native temporal encoder each model family ships with.
TeKind native_te(BackboneKind k);
// The S.III-C swap: DeepSleepNet and AttnSleep exchange temporal encoders.
TeKind swapped_te(BackboneKind k);

struct ModelSpec {
  BackboneKind backbone = BackboneKind::Cnn1d;
  TeKind te = TeKind::Identity;
  int n_classes = 5;
  int64_t input_len = 3000;
  int64_t sampling_rate_hz = 100;

  // Width/depth knobs. Defaults follow the cited architectures at >= 25 Hz
  // and switch to a compact desk-scale profile below that.
  int64_t cnn_ch1 = 32, cnn_ch2 = 64, cnn_ch3 = 128;
  int64_t branch_ch = 64, branch_ch2 = 128;
  int64_t afr_ch = 30;
  int64_t lstm_hidden = 512, lstm_layers = 2;
  int64_t attn_heads = 0;  // 0 = auto: largest of {8,5,4,3,2,1} dividing m1
  int64_t attn_ff = 0;     // 0 = auto: 4 * m1
  int64_t attn_layers = 2;
  double dropout = 0.5;

  static ModelSpec make(BackboneKind backbone, TeKind te, int64_t sampling_rate_hz);

  void validate() const;
  std::string to_json() const;
  static ModelSpec from_json(const std::string& text);
};

struct ParamCounts {
  int64_t feature_extractor = 0;
  int64_t temporal_encoder = 0;
  int64_t classifier = 0;
  int64_t total = 0;
};

namespace detail {
struct Backbone;
struct TemporalEncoder;
}  // namespace detail

// One sleep-staging model: feature extractor phi, temporal encoder te,
// classifier head. Parameters live under the prefixes "phi.", "te.", "clf.".
class Model {
 public:
  Model(ModelSpec spec, uint64_t seed);
  Model(Model&&) noexcept;
  Model& operator=(Model&&) noexcept;
  ~Model();

  const ModelSpec& spec() const { return spec_; }
  nn::ParamRegistry& params() { return params_; }
  const nn::ParamRegistry& params() const { return params_; }

  // x: [B, input_len] -> feature map [B, T, m1]; batch order preserved.
  nn::Var encoder_forward(const Tensor& x, const nn::Fwd& ctx);
  // feature map -> context vector [B, m].
  nn::Var temporal_forward(const nn::Var& f, const nn::Fwd& ctx);
  // context vector -> unnormalized class logits [B, n_classes].
  nn::Var classifier_forward(const nn::Var& c);
  nn::Var logits_forward(const Tensor& x, const nn::Fwd& ctx);

  int64_t feature_dim() const;        // m1
  int64_t context_dim() const;        // m
  int64_t feature_timesteps() const;  // T at spec.input_len

  ParamCounts count_parameters() const;

 private:
  ModelSpec spec_;
  nn::ParamRegistry params_;
  std::unique_ptr<detail::Backbone> phi_;
  std::unique_ptr<detail::TemporalEncoder> te_;
  nn::Linear clf_;
};

Model build_model(const ModelSpec& spec, uint64_t seed);

// Flat archive of named tensors plus the owning ModelSpec. Encoder
// checkpoints carry exactly the phi.* entries (incl. batchnorm buffers).
struct Checkpoint {
  ModelSpec spec;
  std::map<std::string, Tensor> tensors;

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
  bool has_prefix_only(const std::string& prefix) const;
};

Checkpoint encoder_checkpoint(const Model& m);
Checkpoint full_checkpoint(const Model& m);
// Copies phi.* tensors into the model; throws on backbone/shape mismatch.
void load_encoder(Model& m, const Checkpoint& ckpt);
void load_full(Model& m, const Checkpoint& ckpt);

}  // namespace sleepssl::models
