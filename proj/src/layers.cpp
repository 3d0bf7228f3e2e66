#include "sleepssl/layers.hpp"

#include <array>
#include <cmath>
#include <stdexcept>

namespace sleepssl::nn {

Var ParamRegistry::add_param(const std::string& name, Tensor init) {
  if (params_.count(name)) throw std::logic_error("duplicate parameter: " + name);
  Var v = leaf(std::move(init), true);
  params_[name] = v;
  return v;
}

void ParamRegistry::add_buffer(const std::string& name, Tensor* buf) {
  if (buffers_.count(name)) throw std::logic_error("duplicate buffer: " + name);
  buffers_[name] = buf;
}

std::vector<Var> ParamRegistry::trainable() const {
  std::vector<Var> out;
  out.reserve(params_.size());
  for (const auto& [_, v] : params_) out.push_back(v);
  return out;
}

std::vector<Var> ParamRegistry::trainable_prefix(const std::string& prefix) const {
  std::vector<Var> out;
  for (const auto& [name, v] : params_)
    if (name.rfind(prefix, 0) == 0) out.push_back(v);
  return out;
}

int64_t ParamRegistry::count_prefix(const std::string& prefix) const {
  int64_t n = 0;
  for (const auto& [name, v] : params_)
    if (name.rfind(prefix, 0) == 0) n += v->value.numel();
  return n;
}

Var ParamRegistry::find(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("no such parameter: " + name);
  return it->second;
}

Tensor uniform_init(std::vector<int64_t> shape, float bound, Rng& rng) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-bound, bound);
  return t;
}

Linear::Linear(ParamRegistry& reg, const std::string& prefix, int64_t in, int64_t out, Rng& rng)
    : in_(in), out_(out) {
  const float bound = 1.0f / std::sqrt(static_cast<float>(in));
  w_ = reg.add_param(prefix + ".w", uniform_init({in, out}, bound, rng));
  b_ = reg.add_param(prefix + ".b", uniform_init({out}, bound, rng));
}

Conv1d::Conv1d(ParamRegistry& reg, const std::string& prefix, int64_t cin, int64_t cout,
               int64_t k, int64_t stride, int64_t pad, Rng& rng)
    : stride_(stride), pad_(pad), k_(k) {
  const float bound = 1.0f / std::sqrt(static_cast<float>(cin * k));
  w_ = reg.add_param(prefix + ".w", uniform_init({cout, cin, k}, bound, rng));
  b_ = reg.add_param(prefix + ".b", uniform_init({cout}, bound, rng));
}

int64_t Conv1d::out_len(int64_t l) const { return (l + 2 * pad_ - k_) / stride_ + 1; }

BatchNorm1d::BatchNorm1d(ParamRegistry& reg, const std::string& prefix, int64_t channels) {
  gamma_ = reg.add_param(prefix + ".gamma", Tensor::full({channels}, 1.0f));
  beta_ = reg.add_param(prefix + ".beta", Tensor::zeros({channels}));
  running_mean_ = std::make_unique<Tensor>(Tensor::zeros({channels}));
  running_var_ = std::make_unique<Tensor>(Tensor::full({channels}, 1.0f));
  reg.add_buffer(prefix + ".running_mean", running_mean_.get());
  reg.add_buffer(prefix + ".running_var", running_var_.get());
}

Var BatchNorm1d::forward(const Var& x, const Fwd& ctx) {
  return batchnorm1d(x, gamma_, beta_, running_mean_.get(), running_var_.get(), ctx.training,
                     momentum_);
}

LayerNorm::LayerNorm(ParamRegistry& reg, const std::string& prefix, int64_t dim) {
  gamma_ = reg.add_param(prefix + ".gamma", Tensor::full({dim}, 1.0f));
  beta_ = reg.add_param(prefix + ".beta", Tensor::zeros({dim}));
}

BiLstm::BiLstm(ParamRegistry& reg, const std::string& prefix, int64_t in, int64_t hidden,
               int64_t layers, Rng& rng)
    : hidden_(hidden) {
  const float bound = 1.0f / std::sqrt(static_cast<float>(hidden));
  for (int64_t l = 0; l < layers; ++l) {
    const int64_t in_l = l == 0 ? in : 2 * hidden;
    std::array<Dir, 2> dirs;
    for (int d = 0; d < 2; ++d) {
      const std::string p = prefix + ".l" + std::to_string(l) + (d == 0 ? ".fwd" : ".rev");
      dirs[d].wx = reg.add_param(p + ".wx", uniform_init({in_l, 4 * hidden}, bound, rng));
      dirs[d].wh = reg.add_param(p + ".wh", uniform_init({hidden, 4 * hidden}, bound, rng));
      dirs[d].b = reg.add_param(p + ".b", uniform_init({4 * hidden}, bound, rng));
    }
    layers_.push_back(dirs);
  }
}

Var BiLstm::run_dir(const Var& x, const Dir& d, bool reverse) const {
  const int64_t B = x->value.dim(0), T = x->value.dim(1);
  Var h = constant(Tensor::zeros({B, hidden_}));
  Var c = constant(Tensor::zeros({B, hidden_}));
  std::vector<Var> outs(static_cast<size_t>(T));
  for (int64_t step = 0; step < T; ++step) {
    const int64_t t = reverse ? T - 1 - step : step;
    Var xt = squeeze_dim1(slice_dim1(x, t, t + 1));
    Var gates = add(linear(xt, d.wx, d.b), matmul(h, d.wh));
    Var i = sigmoid_op(slice_cols(gates, 0, hidden_));
    Var f = sigmoid_op(slice_cols(gates, hidden_, 2 * hidden_));
    Var g = tanh_op(slice_cols(gates, 2 * hidden_, 3 * hidden_));
    Var o = sigmoid_op(slice_cols(gates, 3 * hidden_, 4 * hidden_));
    c = add(mul(f, c), mul(i, g));
    h = mul(o, tanh_op(c));
    outs[static_cast<size_t>(t)] = h;
  }
  return stack_dim1(outs);
}

Var BiLstm::forward(const Var& x) const {
  Var cur = x;
  for (const auto& dirs : layers_) {
    Var fwd = run_dir(cur, dirs[0], false);
    Var rev = run_dir(cur, dirs[1], true);
    // concat along feature dim: [B,T,h] + [B,T,h] -> [B,T,2h] via channel-style concat
    // on the transposed layout.
    cur = transpose12(concat_dim1(transpose12(fwd), transpose12(rev)));
  }
  return cur;
}

Gru::Gru(ParamRegistry& reg, const std::string& prefix, int64_t in, int64_t hidden, Rng& rng)
    : hidden_(hidden) {
  const float bound = 1.0f / std::sqrt(static_cast<float>(hidden));
  wx_ = reg.add_param(prefix + ".wx", uniform_init({in, 3 * hidden}, bound, rng));
  wh_ = reg.add_param(prefix + ".wh", uniform_init({hidden, 3 * hidden}, bound, rng));
  b_ = reg.add_param(prefix + ".b", uniform_init({3 * hidden}, bound, rng));
}

Var Gru::last_hidden(const Var& x) const {
  const int64_t B = x->value.dim(0), T = x->value.dim(1);
  Var h = constant(Tensor::zeros({B, hidden_}));
  for (int64_t t = 0; t < T; ++t) {
    Var xt = squeeze_dim1(slice_dim1(x, t, t + 1));
    Var gx = linear(xt, wx_, b_);
    Var gh = matmul(h, wh_);
    Var r = sigmoid_op(add(slice_cols(gx, 0, hidden_), slice_cols(gh, 0, hidden_)));
    Var z = sigmoid_op(add(slice_cols(gx, hidden_, 2 * hidden_),
                           slice_cols(gh, hidden_, 2 * hidden_)));
    Var n = tanh_op(add(slice_cols(gx, 2 * hidden_, 3 * hidden_),
                        mul(r, slice_cols(gh, 2 * hidden_, 3 * hidden_))));
    // h' = (1 - z) * n + z * h
    h = add(n, mul(z, sub(h, n)));
  }
  return h;
}

CausalAttentionBlock::CausalAttentionBlock(ParamRegistry& reg, const std::string& prefix,
                                           int64_t dim, int64_t heads, int64_t ff_dim,
                                           float dropout_p, Rng& rng)
    : heads_(heads), dim_(dim), dropout_p_(dropout_p) {
  if (dim % heads != 0) throw std::invalid_argument("attention dim must divide heads");
  wq_ = Linear(reg, prefix + ".wq", dim, dim, rng);
  wk_ = Linear(reg, prefix + ".wk", dim, dim, rng);
  wv_ = Linear(reg, prefix + ".wv", dim, dim, rng);
  wo_ = Linear(reg, prefix + ".wo", dim, dim, rng);
  ff1_ = Linear(reg, prefix + ".ff1", dim, ff_dim, rng);
  ff2_ = Linear(reg, prefix + ".ff2", ff_dim, dim, rng);
  ln1_ = LayerNorm(reg, prefix + ".ln1", dim);
  ln2_ = LayerNorm(reg, prefix + ".ln2", dim);
}

Var CausalAttentionBlock::forward(const Var& x, const Fwd& ctx) const {
  const int64_t B = x->value.dim(0), T = x->value.dim(1);
  const int64_t dh = dim_ / heads_;
  Var flat = reshape(x, {B * T, dim_});
  auto proj = [&](const Linear& lin) {
    return split_heads(reshape(lin.forward(flat), {B, T, dim_}), heads_);
  };
  Var q = scale(proj(wq_), 1.0f / std::sqrt(static_cast<float>(dh)));
  Var k = proj(wk_);
  Var v = proj(wv_);
  Var attn = causal_softmax(bmm(q, transpose12(k)));
  if (ctx.training && dropout_p_ > 0.0f) attn = dropout(attn, dropout_p_, *ctx.rng, true);
  Var merged = merge_heads(bmm(attn, v), heads_);
  Var out = reshape(wo_.forward(reshape(merged, {B * T, dim_})), {B, T, dim_});
  if (ctx.training && dropout_p_ > 0.0f) out = dropout(out, dropout_p_, *ctx.rng, true);
  Var h1 = ln1_.forward(add(x, out));
  Var ff = reshape(ff2_.forward(relu(ff1_.forward(reshape(h1, {B * T, dim_})))), {B, T, dim_});
  if (ctx.training && dropout_p_ > 0.0f) ff = dropout(ff, dropout_p_, *ctx.rng, true);
  return ln2_.forward(add(h1, ff));
}

Adam::Adam(std::vector<Var> params, float lr, float weight_decay, float beta1, float beta2,
           float eps)
    : params_(std::move(params)), lr_(lr), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.emplace_back(Tensor::zeros(p->value.shape()));
    v_.emplace_back(Tensor::zeros(p->value.shape()));
  }
}

void Adam::step() {
  ++t_;
  const float bc1 = 1.0f - std::pow(b1_, static_cast<float>(t_));
  const float bc2 = 1.0f - std::pow(b2_, static_cast<float>(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    Var& p = params_[i];
    if (!p->has_grad()) continue;
    float* w = p->value.data();
    const float* g = p->grad.data();
    float* m = m_[i].data();
    float* v = v_[i].data();
    const int64_t n = p->value.numel();
    for (int64_t j = 0; j < n; ++j) {
      const float gj = g[j] + wd_ * w[j];  // L2-style decay folded into the gradient
      m[j] = b1_ * m[j] + (1.0f - b1_) * gj;
      v[j] = b2_ * v[j] + (1.0f - b2_) * gj * gj;
      const float mhat = m[j] / bc1;
      const float vhat = v[j] / bc2;
      w[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p->grad = Tensor{};
}

int64_t Adam::param_count() const {
  int64_t n = 0;
  for (const auto& p : params_) n += p->value.numel();
  return n;
}

}  // namespace sleepssl::nn
