#include "sleepssl/pretext.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace sleepssl::pretext {

using models::Model;
using nn::Fwd;
using nn::Var;

Algo algo_from_string(const std::string& s) {
  if (s == "clstran") return Algo::ClsTran;
  if (s == "simclr") return Algo::SimClr;
  if (s == "cpc") return Algo::Cpc;
  if (s == "tstcc") return Algo::TsTcc;
  throw std::invalid_argument("unknown pretext algorithm '" + s + "'");
}

std::string to_string(Algo a) {
  switch (a) {
    case Algo::ClsTran: return "clstran";
    case Algo::SimClr: return "simclr";
    case Algo::Cpc: return "cpc";
    case Algo::TsTcc: return "tstcc";
  }
  return "?";
}

namespace {

Tensor gather_rows(const Tensor& data, const std::vector<int64_t>& idx) {
  const int64_t d = data.dim(1);
  Tensor out({static_cast<int64_t>(idx.size()), d});
  for (size_t i = 0; i < idx.size(); ++i)
    std::copy_n(data.data() + idx[i] * d, d, out.data() + static_cast<int64_t>(i) * d);
  return out;
}

// ------------------------------------------------------------- ClsTran

// Transformation classification: each epoch gets one seeded-uniform
// transformation; the pseudo label is the kind index. The full network
// (phi, te, 4-way head) trains; everything past phi is discarded at save.
class ClsTranTask final : public PretextTask {
 public:
  ClsTranTask(Model& model, const PretextConfig& cfg, uint64_t seed) : model_(model), cfg_(cfg) {
    Rng rng(seed, "clstran.head");
    head_ = nn::Linear(heads_, "head", model.context_dim(), aug::kNumKinds, rng);
  }

  Var build_loss(const Tensor& x, uint64_t step_seed, const Fwd& ctx,
                 std::map<std::string, double>* aux) override {
    const int64_t n = x.dim(0);
    if (n < 1) throw std::invalid_argument("clstran: empty batch");
    Rng pick(step_seed, "clstran.kinds");
    std::vector<int> labels(static_cast<size_t>(n));
    for (auto& l : labels) l = static_cast<int>(pick.uniform_int(0, aug::kNumKinds - 1));

    // Group per kind, transform as a sub-batch, scatter back in order.
    Tensor tx = x;
    for (int k = 0; k < aug::kNumKinds; ++k) {
      std::vector<int64_t> idx;
      for (int64_t i = 0; i < n; ++i)
        if (labels[static_cast<size_t>(i)] == k) idx.push_back(i);
      if (idx.empty()) continue;
      aug::AugmentationSpec spec;
      spec.kind = static_cast<aug::Kind>(k);
      spec.noise_sigma = cfg_.views.noise_sigma;
      spec.shift_fraction = cfg_.views.shift_fraction;
      spec.n_segments = cfg_.views.n_segments;
      spec.seed = Rng::mix(step_seed, static_cast<uint64_t>(k));
      Tensor sub = aug::apply(gather_rows(x, idx), spec);
      for (size_t i = 0; i < idx.size(); ++i)
        std::copy_n(sub.data() + static_cast<int64_t>(i) * x.dim(1), x.dim(1),
                    tx.data() + idx[i] * x.dim(1));
    }

    Var logits = head_.forward(model_.temporal_forward(model_.encoder_forward(tx, ctx), ctx));
    Var loss = nn::cross_entropy(logits, labels);
    if (aux) {
      int64_t hit = 0;
      for (int64_t i = 0; i < n; ++i) {
        int64_t arg = 0;
        for (int64_t c = 1; c < aug::kNumKinds; ++c)
          if (logits->value.at2(i, c) > logits->value.at2(i, arg)) arg = c;
        if (arg == labels[static_cast<size_t>(i)]) ++hit;
      }
      (*aux)["pseudo_accuracy"] = static_cast<double>(hit) / static_cast<double>(n);
    }
    return loss;
  }

  std::vector<Var> trainable() override {
    auto out = model_.params().trainable_prefix("phi.");
    for (auto& v : model_.params().trainable_prefix("te.")) out.push_back(v);
    for (auto& v : heads_.trainable()) out.push_back(v);
    return out;
  }
  Algo algo() const override { return Algo::ClsTran; }

 private:
  Model& model_;
  PretextConfig cfg_;
  nn::ParamRegistry heads_;
  nn::Linear head_;
};

// ------------------------------------------------------------- SimCLR

class SimClrTask final : public PretextTask {
 public:
  SimClrTask(Model& model, const PretextConfig& cfg, uint64_t seed) : model_(model), cfg_(cfg) {
    Rng rng(seed, "simclr.head");
    const int64_t m1 = model.feature_dim();
    proj1_ = nn::Linear(heads_, "proj1", m1, m1, rng);
    proj2_ = nn::Linear(heads_, "proj2", m1, cfg.projection_dim, rng);
  }

  Var project(const Tensor& view, const Fwd& ctx) {
    Var pooled = nn::mean_dim1(model_.encoder_forward(view, ctx));
    return nn::l2_normalize_rows(proj2_.forward(nn::relu(proj1_.forward(pooled))));
  }

  Var build_loss(const Tensor& x, uint64_t step_seed, const Fwd& ctx,
                 std::map<std::string, double>* aux) override {
    aug::ViewPair vp = aug::make_view_pair(x, aug::ViewMode::SimClr, step_seed, cfg_.views);
    Var za = project(vp.view_a, ctx);
    Var zb = project(vp.view_b, ctx);
    Var loss = nn::nt_xent(za, zb, static_cast<float>(cfg_.tau));
    if (aux) {
      double pos = 0.0;
      const int64_t n = za->value.dim(0), p = za->value.dim(1);
      for (int64_t i = 0; i < n; ++i) {
        double dot = 0.0;
        for (int64_t k = 0; k < p; ++k)
          dot += static_cast<double>(za->value.at2(i, k)) * zb->value.at2(i, k);
        pos += dot;
      }
      (*aux)["positive_similarity"] = pos / static_cast<double>(n);
      if (n < 2) (*aux)["degenerate"] = 1.0;  // no negatives: loss is exactly 0
    }
    return loss;
  }

  std::vector<Var> trainable() override {
    auto out = model_.params().trainable_prefix("phi.");
    for (auto& v : heads_.trainable()) out.push_back(v);
    return out;
  }
  Algo algo() const override { return Algo::SimClr; }

 private:
  Model& model_;
  PretextConfig cfg_;
  nn::ParamRegistry heads_;
  nn::Linear proj1_, proj2_;
};

// ------------------------------------------------------------- CPC core

// Recurrent aggregator over the leading context steps plus one linear
// predictor per horizon; shared between the CPC and TS-TCC tasks so the
// latter reduces exactly to the former when its views coincide.
struct CpcCore {
  nn::Gru gru;
  std::vector<nn::Linear> predictors;
  int64_t m1 = 0;
  CpcConfig cfg;

  CpcCore() = default;
  CpcCore(nn::ParamRegistry& reg, int64_t m1_, const CpcConfig& cfg_, Rng& rng)
      : m1(m1_), cfg(cfg_) {
    const int64_t hidden = cfg.aggregator_hidden > 0 ? cfg.aggregator_hidden : m1_;
    gru = nn::Gru(reg, "aggregator", m1_, hidden, rng);
    for (int64_t k = 0; k < cfg.k_future; ++k)
      predictors.emplace_back(reg, "predictor" + std::to_string(k + 1), hidden, m1_, rng);
  }

  int64_t context_len(int64_t timesteps) const {
    return static_cast<int64_t>(std::floor(cfg.context_len_fraction *
                                           static_cast<double>(timesteps)));
  }

  void check(int64_t timesteps, int64_t batch) const {
    const int64_t c = context_len(timesteps);
    if (c < 1 || c + cfg.k_future > timesteps)
      throw std::invalid_argument(
          "cpc: insufficient timesteps (" + std::to_string(timesteps) + ") for context " +
          std::to_string(c) + " + " + std::to_string(cfg.k_future) + " future steps");
    if (batch < 2) throw std::invalid_argument("cpc: batch must be >= 2 for negatives");
  }

  // InfoNCE over horizons: context built from `ctx_source`, targets taken
  // from `target`. Both are [B,T,m1] feature maps.
  Var horizon_loss(const Var& ctx_source, const Var& target, std::map<std::string, double>* aux,
                   const std::string& aux_prefix) {
    const int64_t t = ctx_source->value.dim(1);
    const int64_t c = context_len(t);
    Var context = gru.last_hidden(nn::slice_dim1(ctx_source, 0, c));
    std::vector<Var> losses;
    for (int64_t k = 1; k <= cfg.k_future; ++k) {
      Var pred = predictors[static_cast<size_t>(k - 1)].forward(context);
      Var future = nn::squeeze_dim1(nn::slice_dim1(target, c + k - 1, c + k));
      Var lk = nn::info_nce(pred, future);
      if (aux) (*aux)[aux_prefix + "infonce_k" + std::to_string(k)] = lk->value[0];
      losses.push_back(lk);
    }
    return nn::scale(nn::add_vars(losses), 1.0f / static_cast<float>(cfg.k_future));
  }
};

class CpcTask final : public PretextTask {
 public:
  CpcTask(Model& model, const PretextConfig& cfg, uint64_t seed) : model_(model) {
    Rng rng(seed, "cpc.head");
    core_ = CpcCore(heads_, model.feature_dim(), cfg.cpc, rng);
  }

  Var build_loss(const Tensor& x, uint64_t, const Fwd& ctx,
                 std::map<std::string, double>* aux) override {
    Var f = model_.encoder_forward(x, ctx);
    core_.check(f->value.dim(1), f->value.dim(0));
    return core_.horizon_loss(f, f, aux, "");
  }

  std::vector<Var> trainable() override {
    auto out = model_.params().trainable_prefix("phi.");
    for (auto& v : heads_.trainable()) out.push_back(v);
    return out;
  }
  Algo algo() const override { return Algo::Cpc; }

 private:
  Model& model_;
  nn::ParamRegistry heads_;
  CpcCore core_;
};

// ------------------------------------------------------------- TS-TCC

class TsTccTask final : public PretextTask {
 public:
  TsTccTask(Model& model, const PretextConfig& cfg, uint64_t seed) : model_(model), cfg_(cfg) {
    Rng rng(seed, "cpc.head");  // same stream as CpcTask: lambda2=0 + equal views
                                // reduces to cpc_step exactly
    core_ = CpcCore(heads_, model.feature_dim(), cfg.cpc, rng);
    Rng prng(seed, "tstcc.proj");
    const int64_t ar = core_.gru.out_dim();
    const int64_t mid = std::max<int64_t>(2, ar / 2);
    proj1_ = nn::Linear(heads_, "ctx_proj1", ar, mid, prng);
    proj2_ = nn::Linear(heads_, "ctx_proj2", mid, std::min<int64_t>(cfg.projection_dim, ar),
                        prng);
  }

  Var build_loss_views(const Tensor& weak, const Tensor& strong, const Fwd& ctx,
                       std::map<std::string, double>* aux, TsTccIntrospection* probe = nullptr) {
    Var fw = model_.encoder_forward(weak, ctx);
    Var fs = model_.encoder_forward(strong, ctx);
    core_.check(fw->value.dim(1), fw->value.dim(0));

    // Temporal contrasting: each view's context predicts the other view's
    // future latents.
    Var t1 = core_.horizon_loss(fs, fw, aux, "s2w.");
    Var t2 = core_.horizon_loss(fw, fs, aux, "w2s.");
    Var temporal = nn::scale(nn::add(t1, t2), 0.5f);

    // Contextual contrasting over projected context vectors.
    const int64_t t = fw->value.dim(1);
    const int64_t c = core_.context_len(t);
    Var cw = core_.gru.last_hidden(nn::slice_dim1(fw, 0, c));
    Var cs = core_.gru.last_hidden(nn::slice_dim1(fs, 0, c));
    Var zw = nn::l2_normalize_rows(proj2_.forward(nn::relu(proj1_.forward(cw))));
    Var zs = nn::l2_normalize_rows(proj2_.forward(nn::relu(proj1_.forward(cs))));
    if (probe) {
      probe->z_weak = zw->value;
      probe->z_strong = zs->value;
    }
    Var contextual = nn::nt_xent(zw, zs, static_cast<float>(cfg_.tau));

    if (aux) {
      (*aux)["temporal"] = temporal->value[0];
      (*aux)["contextual"] = contextual->value[0];
    }
    return nn::add(nn::scale(temporal, static_cast<float>(cfg_.lambda1)),
                   nn::scale(contextual, static_cast<float>(cfg_.lambda2)));
  }

  Var build_loss(const Tensor& x, uint64_t step_seed, const Fwd& ctx,
                 std::map<std::string, double>* aux) override {
    aug::ViewPair vp = aug::make_view_pair(x, aug::ViewMode::TsTcc, step_seed, cfg_.views);
    return build_loss_views(vp.view_a, vp.view_b, ctx, aux);
  }

  std::vector<Var> trainable() override {
    auto out = model_.params().trainable_prefix("phi.");
    for (auto& v : heads_.trainable()) out.push_back(v);
    return out;
  }
  Algo algo() const override { return Algo::TsTcc; }

 private:
  Model& model_;
  PretextConfig cfg_;
  nn::ParamRegistry heads_;
  CpcCore core_;
  nn::Linear proj1_, proj2_;
};

}  // namespace

Var tstcc_loss_views(PretextTask& task, const Tensor& weak, const Tensor& strong,
                     const nn::Fwd& ctx, std::map<std::string, double>* aux,
                     TsTccIntrospection* probe) {
  auto* t = dynamic_cast<TsTccTask*>(&task);
  if (!t) throw std::invalid_argument("tstcc_loss_views: task is not ts-tcc");
  return t->build_loss_views(weak, strong, ctx, aux, probe);
}

std::unique_ptr<PretextTask> make_task(Algo algo, Model& model, const PretextConfig& cfg,
                                       uint64_t seed) {
  switch (algo) {
    case Algo::ClsTran: return std::make_unique<ClsTranTask>(model, cfg, seed);
    case Algo::SimClr: return std::make_unique<SimClrTask>(model, cfg, seed);
    case Algo::Cpc: return std::make_unique<CpcTask>(model, cfg, seed);
    case Algo::TsTcc: return std::make_unique<TsTccTask>(model, cfg, seed);
  }
  throw std::invalid_argument("make_task: unknown algorithm");
}

PretextBatchResult pretext_step(PretextTask& task, const Tensor& x, uint64_t step_seed,
                                bool training, Rng* dropout_rng) {
  Fwd ctx{training, dropout_rng};
  PretextBatchResult res;
  Var loss = task.build_loss(x, step_seed, ctx, &res.aux);
  res.loss = loss->value[0];
  if (training) nn::backward(loss);
  return res;
}

PretrainResult pretrain(Model& model, Algo algo, const Tensor& data, const TrainBudget& budget,
                        const PretextConfig& cfg, uint64_t seed,
                        const std::filesystem::path& trace_csv) {
  if (data.rank() != 2 || data.dim(0) < 1)
    throw std::invalid_argument("pretrain: non-empty [N, input_len] data expected");
  auto task = make_task(algo, model, cfg, seed);
  nn::Adam opt(task->trainable(), static_cast<float>(budget.lr),
               static_cast<float>(budget.weight_decay));
  Rng dropout_rng(seed, "pretrain.dropout");

  PretrainResult out;
  auto flush_trace = [&] {
    if (trace_csv.empty()) return;
    std::ofstream f(trace_csv, std::ios::trunc);
    f << "epoch,loss\n";
    for (size_t e = 0; e < out.epoch_loss.size(); ++e)
      f << (e + 1) << "," << out.epoch_loss[e] << "\n";
  };

  const int64_t n = data.dim(0);
  std::vector<int64_t> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  for (int64_t epoch = 0; epoch < budget.epochs; ++epoch) {
    Rng shuffle_rng(seed, "pretrain.epoch." + std::to_string(epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng.engine());
    double sum = 0.0;
    int64_t batches = 0;
    for (int64_t start = 0; start < n; start += budget.batch) {
      const int64_t stop = std::min(n, start + budget.batch);
      if (stop - start < 2) break;  // contrastive objectives need negatives
      std::vector<int64_t> idx(order.begin() + start, order.begin() + stop);
      Tensor batch = gather_rows(data, idx);
      opt.zero_grad();
      const uint64_t step_seed = Rng::mix(seed, static_cast<uint64_t>(epoch * 1000003 + start));
      Fwd ctx{true, &dropout_rng};
      Var loss = task->build_loss(batch, step_seed, ctx, nullptr);
      const double lv = loss->value[0];
      if (!std::isfinite(lv)) {
        flush_trace();
        throw std::runtime_error("pretrain: diverged (non-finite loss) at epoch " +
                                 std::to_string(epoch + 1));
      }
      nn::backward(loss);
      opt.step();
      sum += lv;
      ++batches;
      ++out.steps;
    }
    out.epoch_loss.push_back(batches > 0 ? sum / static_cast<double>(batches) : 0.0);
  }
  flush_trace();
  out.encoder = models::encoder_checkpoint(model);
  return out;
}

}  // namespace sleepssl::pretext
