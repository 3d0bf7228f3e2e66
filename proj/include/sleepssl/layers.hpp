#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "sleepssl/autodiff.hpp"
#include "sleepssl/rng.hpp"
#include "sleepssl/tensor.hpp"

namespace sleepssl::nn {

// Named trainable parameters plus non-trainable buffers (batchnorm running
// stats). Names are hierarchical ("phi.block1.conv.w") so sub-network counts
// and encoder-only checkpoints fall out of prefix filters.
class ParamRegistry {
 public:
  Var add_param(const std::string& name, Tensor init);
  void add_buffer(const std::string& name, Tensor* buf);

  const std::map<std::string, Var>& params() const { return params_; }
  const std::map<std::string, Tensor*>& buffers() const { return buffers_; }

  std::vector<Var> trainable() const;
  std::vector<Var> trainable_prefix(const std::string& prefix) const;
  int64_t count_prefix(const std::string& prefix) const;
  Var find(const std::string& name) const;

 private:
  std::map<std::string, Var> params_;
  std::map<std::string, Tensor*> buffers_;
};

struct Fwd {
  bool training = false;
  Rng* rng = nullptr;  // dropout stream; required when training and p > 0
};

// ---- weight init (uniform Kaiming, PyTorch-style bounds) ----
Tensor uniform_init(std::vector<int64_t> shape, float bound, Rng& rng);

class Linear {
 public:
  Linear() = default;
  Linear(ParamRegistry& reg, const std::string& prefix, int64_t in, int64_t out, Rng& rng);
  Var forward(const Var& x) const { return linear(x, w_, b_); }
  int64_t in_dim() const { return in_; }
  int64_t out_dim() const { return out_; }

 private:
  Var w_, b_;
  int64_t in_ = 0, out_ = 0;
};

class Conv1d {
 public:
  Conv1d() = default;
  Conv1d(ParamRegistry& reg, const std::string& prefix, int64_t cin, int64_t cout, int64_t k,
         int64_t stride, int64_t pad, Rng& rng);
  Var forward(const Var& x) const { return conv1d(x, w_, b_, stride_, pad_); }
  int64_t out_len(int64_t l) const;

 private:
  Var w_, b_;
  int64_t stride_ = 1, pad_ = 0, k_ = 0;
};

class BatchNorm1d {
 public:
  BatchNorm1d() = default;
  BatchNorm1d(ParamRegistry& reg, const std::string& prefix, int64_t channels);
  Var forward(const Var& x, const Fwd& ctx);

 private:
  Var gamma_, beta_;
  std::unique_ptr<Tensor> running_mean_, running_var_;
  float momentum_ = 0.1f;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParamRegistry& reg, const std::string& prefix, int64_t dim);
  Var forward(const Var& x) const { return layernorm(x, gamma_, beta_); }

 private:
  Var gamma_, beta_;
};

// Bidirectional LSTM; forward returns per-timestep outputs [B,T,2h].
class BiLstm {
 public:
  BiLstm() = default;
  BiLstm(ParamRegistry& reg, const std::string& prefix, int64_t in, int64_t hidden,
         int64_t layers, Rng& rng);
  Var forward(const Var& x) const;  // x: [B,T,in]
  int64_t out_dim() const { return 2 * hidden_; }

 private:
  struct Dir {
    Var wx, wh, b;
  };
  Var run_dir(const Var& x, const Dir& d, bool reverse) const;
  std::vector<std::array<Dir, 2>> layers_;
  int64_t hidden_ = 0;
};

// Single-layer unidirectional GRU; returns the hidden state after consuming
// the whole sequence, plus optionally per-step states.
class Gru {
 public:
  Gru() = default;
  Gru(ParamRegistry& reg, const std::string& prefix, int64_t in, int64_t hidden, Rng& rng);
  Var last_hidden(const Var& x) const;  // x: [B,T,in] -> [B,h]
  int64_t out_dim() const { return hidden_; }

 private:
  Var wx_, wh_, b_;
  int64_t hidden_ = 0;
};

// Post-norm transformer block with a causal attention mask.
class CausalAttentionBlock {
 public:
  CausalAttentionBlock() = default;
  CausalAttentionBlock(ParamRegistry& reg, const std::string& prefix, int64_t dim, int64_t heads,
                       int64_t ff_dim, float dropout_p, Rng& rng);
  Var forward(const Var& x, const Fwd& ctx) const;  // x: [B,T,d]

 private:
  Linear wq_, wk_, wv_, wo_, ff1_, ff2_;
  LayerNorm ln1_, ln2_;
  int64_t heads_ = 1, dim_ = 0;
  float dropout_p_ = 0.0f;
};

class Adam {
 public:
  Adam(std::vector<Var> params, float lr, float weight_decay = 0.0f, float beta1 = 0.9f,
       float beta2 = 0.999f, float eps = 1e-8f);
  void step();
  void zero_grad();
  int64_t steps_taken() const { return t_; }
  int64_t param_count() const;

 private:
  std::vector<Var> params_;
  std::vector<Tensor> m_, v_;
  float lr_, wd_, b1_, b2_, eps_;
  int64_t t_ = 0;
};

}  // namespace sleepssl::nn
