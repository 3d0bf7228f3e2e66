#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "sleepssl/augment.hpp"
#include "sleepssl/models.hpp"

namespace sleepssl::pretext {

enum class Algo { ClsTran, SimClr, Cpc, TsTcc };
Algo algo_from_string(const std::string& s);
std::string to_string(Algo a);

struct CpcConfig {
  double context_len_fraction = 0.5;
  int64_t k_future = 4;
  int64_t aggregator_hidden = 0;  // 0 = feature dim
};

struct PretextConfig {
  double tau = 0.2;
  int64_t projection_dim = 128;
  CpcConfig cpc;
  double lambda1 = 1.0;  // ts-tcc temporal weight
  double lambda2 = 1.0;  // ts-tcc contextual weight
  aug::ViewConfig views;
};

struct PretextBatchResult {
  double loss = 0.0;
  std::map<std::string, double> aux;
};

// One self-supervised objective bound to a model. Auxiliary heads
// (projections, aggregators, horizon predictors, the pretext classifier) are
// owned by the task and discarded at checkpoint time; only phi survives.
class PretextTask {
 public:
  virtual ~PretextTask() = default;
  virtual nn::Var build_loss(const Tensor& x, uint64_t step_seed, const nn::Fwd& ctx,
                             std::map<std::string, double>* aux) = 0;
  virtual std::vector<nn::Var> trainable() = 0;
  virtual Algo algo() const = 0;
};

std::unique_ptr<PretextTask> make_task(Algo algo, models::Model& model,
                                       const PretextConfig& cfg, uint64_t seed);

// TS-TCC with explicit views, bypassing the augmentation stage; `probe`, when
// given, receives the normalized context projections fed to NT-Xent. This is
// the seam the structural-reduction checks use (identical views + lambda2=0
// reduce to CPC; lambda1=0 reduces to NT-Xent over contexts).
struct TsTccIntrospection {
  Tensor z_weak, z_strong;
};
nn::Var tstcc_loss_views(PretextTask& task, const Tensor& weak, const Tensor& strong,
                         const nn::Fwd& ctx, std::map<std::string, double>* aux,
                         TsTccIntrospection* probe = nullptr);

// Builds the loss graph for one batch and reads it out; when `training`,
// gradients are left populated for an optimizer step.
PretextBatchResult pretext_step(PretextTask& task, const Tensor& x, uint64_t step_seed,
                                bool training = false, Rng* dropout_rng = nullptr);

struct TrainBudget {
  int64_t epochs = 40;
  int64_t batch = 128;
  double lr = 1e-3;
  double weight_decay = 1e-4;
};

struct PretrainResult {
  models::Checkpoint encoder;  // phi parameters and buffers only
  std::vector<double> epoch_loss;
  int64_t steps = 0;
};

// Adam over phi plus task heads; per-epoch mean loss trace persisted to
// trace_csv when given. Throws on divergence (non-finite loss) after writing
// the trace collected so far.
PretrainResult pretrain(models::Model& model, Algo algo, const Tensor& data,
                        const TrainBudget& budget, const PretextConfig& cfg, uint64_t seed,
                        const std::filesystem::path& trace_csv = {});

}  // namespace sleepssl::pretext
