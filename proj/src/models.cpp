#include "sleepssl/models.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace sleepssl::models {

using nlohmann::json;
using nn::Fwd;
using nn::Var;

BackboneKind backbone_from_string(const std::string& s) {
  if (s == "deepsleepnet") return BackboneKind::DeepSleepNet;
  if (s == "attnsleep") return BackboneKind::AttnSleep;
  if (s == "cnn1d") return BackboneKind::Cnn1d;
  throw std::invalid_argument("unknown backbone kind '" + s + "'");
}

TeKind te_from_string(const std::string& s) {
  if (s == "bilstm_residual") return TeKind::BilstmResidual;
  if (s == "causal_attention") return TeKind::CausalAttention;
  if (s == "identity") return TeKind::Identity;
  throw std::invalid_argument("unknown temporal-encoder kind '" + s + "'");
}

std::string to_string(BackboneKind k) {
  switch (k) {
    case BackboneKind::DeepSleepNet: return "deepsleepnet";
    case BackboneKind::AttnSleep: return "attnsleep";
    case BackboneKind::Cnn1d: return "cnn1d";
  }
  return "?";
}

std::string to_string(TeKind k) {
  switch (k) {
    case TeKind::BilstmResidual: return "bilstm_residual";
    case TeKind::CausalAttention: return "causal_attention";
    case TeKind::Identity: return "identity";
  }
  return "?";
}

TeKind native_te(BackboneKind k) {
  switch (k) {
    case BackboneKind::DeepSleepNet: return TeKind::BilstmResidual;
    case BackboneKind::AttnSleep: return TeKind::CausalAttention;
    case BackboneKind::Cnn1d: return TeKind::Identity;
  }
  return TeKind::Identity;
}

TeKind swapped_te(BackboneKind k) {
  switch (k) {
    case BackboneKind::DeepSleepNet: return TeKind::CausalAttention;
    case BackboneKind::AttnSleep: return TeKind::BilstmResidual;
    case BackboneKind::Cnn1d: return TeKind::Identity;
  }
  return TeKind::Identity;
}

ModelSpec ModelSpec::make(BackboneKind backbone, TeKind te, int64_t srate) {
  ModelSpec s;
  s.backbone = backbone;
  s.te = te;
  s.sampling_rate_hz = srate;
  s.input_len = 30 * srate;
  return s;
}

void ModelSpec::validate() const {
  if (n_classes != 5) throw std::invalid_argument("ModelSpec: n_classes must be 5");
  if (sampling_rate_hz <= 0 || input_len != 30 * sampling_rate_hz)
    throw std::invalid_argument("ModelSpec: input_len must be 30 * sampling_rate_hz");
  if (cnn_ch1 < 1 || cnn_ch2 < 1 || cnn_ch3 < 1 || branch_ch < 1 || branch_ch2 < 1 ||
      afr_ch < 1 || lstm_hidden < 1 || lstm_layers < 1 || attn_layers < 1)
    throw std::invalid_argument("ModelSpec: widths must be positive");
  if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("ModelSpec: bad dropout");
}

std::string ModelSpec::to_json() const {
  json j = {{"backbone", to_string(backbone)},
            {"te", to_string(te)},
            {"n_classes", n_classes},
            {"input_len", input_len},
            {"sampling_rate_hz", sampling_rate_hz},
            {"cnn_ch1", cnn_ch1},
            {"cnn_ch2", cnn_ch2},
            {"cnn_ch3", cnn_ch3},
            {"branch_ch", branch_ch},
            {"branch_ch2", branch_ch2},
            {"afr_ch", afr_ch},
            {"lstm_hidden", lstm_hidden},
            {"lstm_layers", lstm_layers},
            {"attn_heads", attn_heads},
            {"attn_ff", attn_ff},
            {"attn_layers", attn_layers},
            {"dropout", dropout}};
  return j.dump();
}

ModelSpec ModelSpec::from_json(const std::string& text) {
  json j = json::parse(text);
  ModelSpec s;
  s.backbone = backbone_from_string(j.at("backbone").get<std::string>());
  s.te = te_from_string(j.at("te").get<std::string>());
  s.n_classes = j.at("n_classes").get<int>();
  s.input_len = j.at("input_len").get<int64_t>();
  s.sampling_rate_hz = j.at("sampling_rate_hz").get<int64_t>();
  s.cnn_ch1 = j.at("cnn_ch1").get<int64_t>();
  s.cnn_ch2 = j.at("cnn_ch2").get<int64_t>();
  s.cnn_ch3 = j.at("cnn_ch3").get<int64_t>();
  s.branch_ch = j.at("branch_ch").get<int64_t>();
  s.branch_ch2 = j.at("branch_ch2").get<int64_t>();
  s.afr_ch = j.at("afr_ch").get<int64_t>();
  s.lstm_hidden = j.at("lstm_hidden").get<int64_t>();
  s.lstm_layers = j.at("lstm_layers").get<int64_t>();
  s.attn_heads = j.at("attn_heads").get<int64_t>();
  s.attn_ff = j.at("attn_ff").get<int64_t>();
  s.attn_layers = j.at("attn_layers").get<int64_t>();
  s.dropout = j.at("dropout").get<double>();
  return s;
}

namespace detail {

namespace {

int64_t conv_len(int64_t l, int64_t k, int64_t s, int64_t p) { return (l + 2 * p - k) / s + 1; }

struct PoolCfg {
  int64_t k, s, p;
};

struct ConvBnAct {
  nn::Conv1d conv;
  nn::BatchNorm1d bn;
  bool use_gelu = false;
  int64_t k = 0, s = 1, p = 0;

  ConvBnAct() = default;
  ConvBnAct(nn::ParamRegistry& reg, const std::string& prefix, int64_t cin, int64_t cout,
            int64_t k_, int64_t s_, int64_t p_, bool gelu_act, Rng& rng)
      : conv(reg, prefix + ".conv", cin, cout, k_, s_, p_, rng),
        bn(reg, prefix + ".bn", cout),
        use_gelu(gelu_act),
        k(k_),
        s(s_),
        p(p_) {}

  Var forward(const Var& x, const Fwd& ctx) {
    Var h = bn.forward(conv.forward(x), ctx);
    return use_gelu ? nn::gelu(h) : nn::relu(h);
  }
  int64_t len(int64_t l) const { return conv_len(l, k, s, p); }
};

}  // namespace

struct Backbone {
  virtual ~Backbone() = default;
  virtual Var forward(const Var& x, const Fwd& ctx) = 0;  // [B,1,L] -> [B,C,T]
  virtual int64_t out_channels() const = 0;
  virtual int64_t out_len(int64_t l) const = 0;
};

// ---------------------------------------------------------------- 1D-CNN

struct Cnn1dBackbone final : Backbone {
  ConvBnAct c1, c2, c3;
  PoolCfg p1{}, p2{}, p3{};
  float drop = 0.35f;
  int64_t ch3;

  Cnn1dBackbone(nn::ParamRegistry& reg, const ModelSpec& s, Rng& rng) : ch3(s.cnn_ch3) {
    const bool full = s.sampling_rate_hz >= 25;
    const int64_t k1 = full ? 25 : 7;
    const int64_t s1 = full ? 3 : 1;
    p1 = full ? PoolCfg{8, 2, 4} : PoolCfg{4, 2, 2};
    p2 = full ? PoolCfg{4, 4, 2} : PoolCfg{2, 2, 1};
    p3 = p2;
    c1 = ConvBnAct(reg, "phi.block1", 1, s.cnn_ch1, k1, s1, k1 / 2, false, rng);
    c2 = ConvBnAct(reg, "phi.block2", s.cnn_ch1, s.cnn_ch2, 8, 1, 4, false, rng);
    c3 = ConvBnAct(reg, "phi.block3", s.cnn_ch2, s.cnn_ch3, 8, 1, 4, false, rng);
  }

  Var forward(const Var& x, const Fwd& ctx) override {
    Var h = nn::maxpool1d(c1.forward(x, ctx), p1.k, p1.s, p1.p);
    if (ctx.training) h = nn::dropout(h, drop, *ctx.rng, true);
    h = nn::maxpool1d(c2.forward(h, ctx), p2.k, p2.s, p2.p);
    h = nn::maxpool1d(c3.forward(h, ctx), p3.k, p3.s, p3.p);
    return h;
  }
  int64_t out_channels() const override { return ch3; }
  int64_t out_len(int64_t l) const override {
    l = conv_len(c1.len(l), p1.k, p1.s, p1.p);
    l = conv_len(c2.len(l), p2.k, p2.s, p2.p);
    l = conv_len(c3.len(l), p3.k, p3.s, p3.p);
    return l;
  }
};

// ------------------------------------------------- two-branch CNN machinery

// One convolutional branch: entry conv (kernel scaled from the sampling
// rate), pool, dropout, a run of same-size convs, then a second pool.
struct Branch {
  ConvBnAct entry;
  std::vector<ConvBnAct> convs;
  PoolCfg pool1{}, pool2{};
  float drop;

  Branch() : drop(0.5f) {}
  Branch(nn::ParamRegistry& reg, const std::string& prefix, int64_t ch, int64_t ch2,
         int64_t k0, int64_t s0, PoolCfg p1_, int64_t kc, int n_convs, PoolCfg p2_,
         bool gelu_act, float dropout, Rng& rng)
      : entry(reg, prefix + ".entry", 1, ch, k0, s0, k0 / 2, gelu_act, rng),
        pool1(p1_),
        pool2(p2_),
        drop(dropout) {
    for (int i = 0; i < n_convs; ++i) {
      const int64_t cin = i == 0 ? ch : ch2;
      convs.emplace_back(reg, prefix + ".conv" + std::to_string(i + 1), cin, ch2, kc, 1, kc / 2,
                         gelu_act, rng);
    }
  }

  Var forward(const Var& x, const Fwd& ctx) {
    Var h = nn::maxpool1d(entry.forward(x, ctx), pool1.k, pool1.s, pool1.p);
    if (ctx.training && drop > 0.0f) h = nn::dropout(h, drop, *ctx.rng, true);
    for (auto& c : convs) h = c.forward(h, ctx);
    return nn::maxpool1d(h, pool2.k, pool2.s, pool2.p);
  }
  int64_t len(int64_t l) const {
    l = conv_len(entry.len(l), pool1.k, pool1.s, pool1.p);
    for (const auto& c : convs) l = c.len(l);
    return conv_len(l, pool2.k, pool2.s, pool2.p);
  }
};

// ---------------------------------------------------------------- DeepSleepNet

struct DeepSleepBackbone final : Backbone {
  Branch small, large;
  float drop;
  int64_t m1;
  int64_t input_len;

  DeepSleepBackbone(nn::ParamRegistry& reg, const ModelSpec& s, Rng& rng)
      : drop(static_cast<float>(s.dropout)), m1(2 * s.branch_ch2), input_len(s.input_len) {
    const int64_t r = s.sampling_rate_hz;
    if (r >= 25) {
      small = Branch(reg, "phi.small", s.branch_ch, s.branch_ch2, r / 2,
                     std::max<int64_t>(1, r / 16), {8, 8, 4}, 8, 3, {4, 4, 2}, false,
                     static_cast<float>(s.dropout), rng);
      large = Branch(reg, "phi.large", s.branch_ch, s.branch_ch2, r * 4,
                     std::max<int64_t>(1, r / 2), {4, 4, 2}, 6, 3, {2, 2, 1}, false,
                     static_cast<float>(s.dropout), rng);
    } else {
      small = Branch(reg, "phi.small", s.branch_ch, s.branch_ch2, 3, 1, {4, 2, 2}, 4, 3,
                     {2, 2, 1}, false, static_cast<float>(s.dropout), rng);
      large = Branch(reg, "phi.large", s.branch_ch, s.branch_ch2, 16, 2, {2, 2, 1}, 4, 3,
                     {2, 2, 1}, false, static_cast<float>(s.dropout), rng);
    }
  }

  Var forward(const Var& x, const Fwd& ctx) override {
    Var a = small.forward(x, ctx);
    Var b = large.forward(x, ctx);
    // Branch strides differ; align on the shorter temporal axis before the
    // per-timestep channel concat.
    const int64_t t = out_len(input_len);
    if (a->value.dim(2) != t) a = nn::adaptive_avg_pool1d(a, t);
    if (b->value.dim(2) != t) b = nn::adaptive_avg_pool1d(b, t);
    Var h = nn::concat_dim1(a, b);
    if (ctx.training && drop > 0.0f) h = nn::dropout(h, drop, *ctx.rng, true);
    return h;
  }
  int64_t out_channels() const override { return m1; }
  int64_t out_len(int64_t l) const override { return std::min(small.len(l), large.len(l)); }
};

// ---------------------------------------------------------------- AttnSleep

struct AttnSleepBackbone final : Backbone {
  Branch b1, b2;
  // Adaptive feature recalibration: conv reduce + squeeze/excite + shortcut.
  ConvBnAct afr_conv;
  nn::Linear se_fc1, se_fc2;
  nn::Conv1d shortcut;
  int64_t afr;
  int64_t input_len;

  AttnSleepBackbone(nn::ParamRegistry& reg, const ModelSpec& s, Rng& rng)
      : afr(s.afr_ch), input_len(s.input_len) {
    const int64_t r = s.sampling_rate_hz;
    const float drop = 0.1f;
    if (r >= 25) {
      b1 = Branch(reg, "phi.b1", s.branch_ch, s.branch_ch2, r / 2,
                  std::max<int64_t>(1, r / 16), {8, 2, 4}, 8, 2, {4, 4, 2}, true, drop, rng);
      b2 = Branch(reg, "phi.b2", s.branch_ch, s.branch_ch2, r * 4, std::max<int64_t>(1, r / 2),
                  {4, 2, 2}, 7, 2, {2, 2, 1}, true, drop, rng);
    } else {
      b1 = Branch(reg, "phi.b1", s.branch_ch, s.branch_ch2, 3, 1, {4, 2, 2}, 8, 2, {2, 2, 1},
                  true, drop, rng);
      b2 = Branch(reg, "phi.b2", s.branch_ch, s.branch_ch2, 16, 2, {2, 2, 1}, 7, 2, {2, 2, 1},
                  true, drop, rng);
    }
    const int64_t cat = 2 * s.branch_ch2;
    afr_conv = ConvBnAct(reg, "phi.afr", cat, s.afr_ch, 3, 1, 1, false, rng);
    const int64_t se_mid = std::max<int64_t>(1, s.afr_ch / 4);
    se_fc1 = nn::Linear(reg, "phi.se.fc1", s.afr_ch, se_mid, rng);
    se_fc2 = nn::Linear(reg, "phi.se.fc2", se_mid, s.afr_ch, rng);
    shortcut = nn::Conv1d(reg, "phi.afr_shortcut", cat, s.afr_ch, 1, 1, 0, rng);
  }

  Var forward(const Var& x, const Fwd& ctx) override {
    Var a = b1.forward(x, ctx);
    Var b = b2.forward(x, ctx);
    const int64_t t = out_len(input_len);
    if (a->value.dim(2) != t) a = nn::adaptive_avg_pool1d(a, t);
    if (b->value.dim(2) != t) b = nn::adaptive_avg_pool1d(b, t);
    Var cat = nn::concat_dim1(a, b);
    Var h = afr_conv.forward(cat, ctx);
    Var squeezed = nn::mean_dim2(h);  // [B, afr]
    Var gate = nn::sigmoid_op(se_fc2.forward(nn::relu(se_fc1.forward(squeezed))));
    Var recal = nn::broadcast_mul_rows(h, gate);
    return nn::relu(nn::add(recal, shortcut.forward(cat)));
  }
  int64_t out_channels() const override { return afr; }
  int64_t out_len(int64_t l) const override {
    return std::min(b1.len(l), b2.len(l));  // afr convs are length-preserving
  }
};

// ---------------------------------------------------------------- temporal encoders

struct TemporalEncoder {
  virtual ~TemporalEncoder() = default;
  virtual Var forward(const Var& f, const Fwd& ctx) = 0;  // [B,T,m1] -> [B,m]
  virtual int64_t out_dim() const = 0;
};

// Mean-pool over timesteps; parameter-free so "without temporal encoder"
// fine-tuning is well-typed for every backbone (m = m1).
struct IdentityTe final : TemporalEncoder {
  int64_t m1;
  explicit IdentityTe(int64_t m1_) : m1(m1_) {}
  Var forward(const Var& f, const Fwd&) override { return nn::mean_dim1(f); }
  int64_t out_dim() const override { return m1; }
};

struct BilstmTe final : TemporalEncoder {
  nn::BiLstm lstm;
  nn::Linear proj;  // residual path m1 -> 2h
  int64_t m1, h2;

  BilstmTe(nn::ParamRegistry& reg, int64_t m1_, int64_t hidden, int64_t layers, Rng& rng)
      : lstm(reg, "te.bilstm", m1_, hidden, layers, rng),
        proj(reg, "te.residual", m1_, 2 * hidden, rng),
        m1(m1_),
        h2(2 * hidden) {}

  Var forward(const Var& f, const Fwd&) override {
    const int64_t b = f->value.dim(0), t = f->value.dim(1);
    Var seq = lstm.forward(f);
    Var res = nn::reshape(proj.forward(nn::reshape(f, {b * t, m1})), {b, t, h2});
    return nn::mean_dim1(nn::add(seq, res));
  }
  int64_t out_dim() const override { return h2; }
};

struct AttentionTe final : TemporalEncoder {
  std::vector<nn::CausalAttentionBlock> blocks;
  int64_t m1;

  AttentionTe(nn::ParamRegistry& reg, const ModelSpec& s, int64_t m1_, Rng& rng) : m1(m1_) {
    int64_t heads = s.attn_heads;
    if (heads == 0)
      for (int64_t h : {8, 5, 4, 3, 2, 1})
        if (m1 % h == 0) {
          heads = h;
          break;
        }
    const int64_t ff = s.attn_ff == 0 ? 4 * m1 : s.attn_ff;
    for (int64_t i = 0; i < s.attn_layers; ++i)
      blocks.emplace_back(reg, "te.attn" + std::to_string(i), m1, heads, ff, 0.1f, rng);
  }

  Var forward(const Var& f, const Fwd& ctx) override {
    Var h = f;
    for (auto& b : blocks) h = b.forward(h, ctx);
    return nn::mean_dim1(h);
  }
  int64_t out_dim() const override { return m1; }
};

}  // namespace detail

// ---------------------------------------------------------------- Model

Model::Model(ModelSpec spec, uint64_t seed) : spec_(spec) {
  spec_.validate();
  Rng rng(seed, "model.init");
  switch (spec_.backbone) {
    case BackboneKind::Cnn1d:
      phi_ = std::make_unique<detail::Cnn1dBackbone>(params_, spec_, rng);
      break;
    case BackboneKind::DeepSleepNet:
      phi_ = std::make_unique<detail::DeepSleepBackbone>(params_, spec_, rng);
      break;
    case BackboneKind::AttnSleep:
      phi_ = std::make_unique<detail::AttnSleepBackbone>(params_, spec_, rng);
      break;
  }
  const int64_t t = phi_->out_len(spec_.input_len);
  if (t < 2)
    throw std::invalid_argument("Model: input_len " + std::to_string(spec_.input_len) +
                                " leaves " + std::to_string(t) +
                                " feature timesteps; pooling arithmetic needs >= 2");
  switch (spec_.te) {
    case TeKind::Identity:
      te_ = std::make_unique<detail::IdentityTe>(phi_->out_channels());
      break;
    case TeKind::BilstmResidual:
      te_ = std::make_unique<detail::BilstmTe>(params_, phi_->out_channels(), spec_.lstm_hidden,
                                               spec_.lstm_layers, rng);
      break;
    case TeKind::CausalAttention:
      te_ = std::make_unique<detail::AttentionTe>(params_, spec_, phi_->out_channels(), rng);
      break;
  }
  clf_ = nn::Linear(params_, "clf", te_->out_dim(), spec_.n_classes, rng);
}

Model::Model(Model&&) noexcept = default;
Model& Model::operator=(Model&&) noexcept = default;
Model::~Model() = default;

Var Model::encoder_forward(const Tensor& x, const Fwd& ctx) {
  if (x.rank() != 2 || x.dim(1) != spec_.input_len)
    throw std::invalid_argument("encoder_forward: batch must be [B, " +
                                std::to_string(spec_.input_len) + "], got " +
                                Tensor::shape_str(x.shape()));
  Var in = nn::constant(x.reshaped({x.dim(0), 1, x.dim(1)}));
  Var fmap = phi_->forward(in, ctx);     // [B, m1, T]
  return nn::transpose12(fmap);          // [B, T, m1]
}

Var Model::temporal_forward(const Var& f, const Fwd& ctx) {
  if (f->value.rank() != 3 || f->value.dim(2) != feature_dim())
    throw std::invalid_argument("temporal_forward: feature map shape mismatch");
  return te_->forward(f, ctx);
}

Var Model::classifier_forward(const Var& c) {
  if (c->value.rank() != 2 || c->value.dim(1) != context_dim())
    throw std::invalid_argument("classifier_forward: context shape mismatch");
  return clf_.forward(c);
}

Var Model::logits_forward(const Tensor& x, const Fwd& ctx) {
  return classifier_forward(temporal_forward(encoder_forward(x, ctx), ctx));
}

int64_t Model::feature_dim() const { return phi_->out_channels(); }
int64_t Model::context_dim() const { return te_->out_dim(); }
int64_t Model::feature_timesteps() const { return phi_->out_len(spec_.input_len); }

ParamCounts Model::count_parameters() const {
  ParamCounts c;
  c.feature_extractor = params_.count_prefix("phi.");
  c.temporal_encoder = params_.count_prefix("te.");
  c.classifier = params_.count_prefix("clf.");
  c.total = c.feature_extractor + c.temporal_encoder + c.classifier;
  return c;
}

Model build_model(const ModelSpec& spec, uint64_t seed) { return Model(spec, seed); }

// ---------------------------------------------------------------- checkpoints

namespace {
constexpr char kMagic[8] = {'S', 'S', 'L', 'C', 'K', 'P', 'T', '1'};
}

void Checkpoint::save(const std::filesystem::path& path) const {
  json tensor_dir = json::array();
  int64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    tensor_dir.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    offset += t.numel();
  }
  json header = {{"spec", json::parse(spec.to_json())}, {"tensors", tensor_dir}};
  const std::string htext = header.dump();
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("checkpoint: cannot write " + path.string());
  f.write(kMagic, 8);
  const uint64_t hlen = htext.size();
  f.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  f.write(htext.data(), static_cast<std::streamsize>(htext.size()));
  for (const auto& [name, t] : tensors)
    f.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(t.numel() * sizeof(float)));
  if (!f) throw std::runtime_error("checkpoint: write failed for " + path.string());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path.string());
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path.string());
  uint64_t hlen = 0;
  f.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  std::string htext(hlen, '\0');
  f.read(htext.data(), static_cast<std::streamsize>(hlen));
  json header = json::parse(htext);
  Checkpoint ckpt;
  ckpt.spec = ModelSpec::from_json(header.at("spec").dump());
  for (const auto& e : header.at("tensors")) {
    std::vector<int64_t> shape = e.at("shape").get<std::vector<int64_t>>();
    Tensor t(shape);
    f.read(reinterpret_cast<char*>(t.data()),
           static_cast<std::streamsize>(t.numel() * sizeof(float)));
    ckpt.tensors.emplace(e.at("name").get<std::string>(), std::move(t));
  }
  if (!f) throw std::runtime_error("checkpoint: short read on " + path.string());
  return ckpt;
}

bool Checkpoint::has_prefix_only(const std::string& prefix) const {
  for (const auto& [name, _] : tensors)
    if (name.rfind(prefix, 0) != 0) return false;
  return true;
}

namespace {

Checkpoint snapshot(const Model& m, const std::string& prefix) {
  Checkpoint c;
  c.spec = m.spec();
  for (const auto& [name, v] : m.params().params())
    if (prefix.empty() || name.rfind(prefix, 0) == 0) c.tensors.emplace(name, v->value);
  for (const auto& [name, buf] : m.params().buffers())
    if (prefix.empty() || name.rfind(prefix, 0) == 0) c.tensors.emplace(name, *buf);
  return c;
}

void restore(Model& m, const Checkpoint& ckpt, const std::string& prefix) {
  if (ckpt.spec.backbone != m.spec().backbone ||
      ckpt.spec.input_len != m.spec().input_len ||
      ckpt.spec.sampling_rate_hz != m.spec().sampling_rate_hz)
    throw std::runtime_error("checkpoint/spec mismatch: encoder was built for " +
                             to_string(ckpt.spec.backbone) + "@" +
                             std::to_string(ckpt.spec.input_len) + ", model expects " +
                             to_string(m.spec().backbone) + "@" +
                             std::to_string(m.spec().input_len));
  auto& params = m.params();
  for (const auto& [name, v] : params.params()) {
    if (name.rfind(prefix, 0) != 0) continue;
    auto it = ckpt.tensors.find(name);
    if (it == ckpt.tensors.end())
      throw std::runtime_error("checkpoint/spec mismatch: missing tensor " + name);
    if (!it->second.same_shape(v->value))
      throw std::runtime_error("checkpoint/spec mismatch: shape of " + name);
    v->value = it->second;
  }
  for (const auto& [name, buf] : params.buffers()) {
    if (name.rfind(prefix, 0) != 0) continue;
    auto it = ckpt.tensors.find(name);
    if (it == ckpt.tensors.end())
      throw std::runtime_error("checkpoint/spec mismatch: missing buffer " + name);
    *buf = it->second;
  }
}

}  // namespace

Checkpoint encoder_checkpoint(const Model& m) { return snapshot(m, "phi."); }
Checkpoint full_checkpoint(const Model& m) { return snapshot(m, ""); }
void load_encoder(Model& m, const Checkpoint& ckpt) { restore(m, ckpt, "phi."); }
void load_full(Model& m, const Checkpoint& ckpt) { restore(m, ckpt, ""); }

}  // namespace sleepssl::models
