#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "sleepssl/rng.hpp"
#include "sleepssl/tensor.hpp"

// Reverse-mode autodiff over Tensor values. Graphs are built per training
// step and freed when the root goes out of scope. Softmax-family losses are
// fused nodes with double-precision internals and row-max stabilization.
namespace sleepssl::nn {

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  Tensor grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<Var> parents;
  std::function<void(Node&)> backward_fn;

  bool has_grad() const { return !grad.empty(); }
  Tensor& grad_ref();  // allocates zeros of value's shape if needed
};

Var leaf(Tensor value, bool requires_grad = false);
Var constant(Tensor value);

// Accumulate g into v's grad if v requires one.
void acc_grad(const Var& v, const Tensor& g);

// Backpropagate from a scalar root (shape [1]); seeds d(root)/d(root) = 1.
void backward(const Var& root);

// ---- elementwise / shape ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, float s);
Var add_vars(const std::vector<Var>& xs);
Var relu(const Var& x);
Var gelu(const Var& x);
Var tanh_op(const Var& x);
Var sigmoid_op(const Var& x);
Var reshape(const Var& x, std::vector<int64_t> shape);
Var transpose12(const Var& x);                           // [B,C,L] <-> [B,L,C]
Var concat_dim1(const Var& a, const Var& b);             // rank-3, dim 1
Var slice_dim1(const Var& x, int64_t i0, int64_t i1);    // rank-3, dim 1
Var slice_cols(const Var& x, int64_t c0, int64_t c1);    // rank-2, dim 1
Var stack_dim1(const std::vector<Var>& xs);              // T x [B,D] -> [B,T,D]
Var squeeze_dim1(const Var& x);                          // [B,1,D] -> [B,D]
Var mean_dim1(const Var& x);                             // [B,T,D] -> [B,D]
Var mean_dim2(const Var& x);                             // [B,C,L] -> [B,C]
Var broadcast_mul_rows(const Var& x, const Var& s);      // [B,C,L] * [B,C,1-like [B,C]]

// ---- linear algebra ----
Var matmul(const Var& a, const Var& b);                  // [N,K]x[K,M]
Var linear(const Var& x, const Var& w, const Var& b);    // x[N,K]*w[K,M]+b[M]
Var bmm(const Var& a, const Var& b);                     // [B,N,K]x[B,K,M]

// ---- convolution / pooling ----
Var conv1d(const Var& x, const Var& w, const Var& b, int64_t stride, int64_t pad);
Var maxpool1d(const Var& x, int64_t k, int64_t stride, int64_t pad);
Var adaptive_avg_pool1d(const Var& x, int64_t out_len);

// ---- normalization / regularization ----
// x is [B,C,L]; running stats are owned by the caller and updated in training.
Var batchnorm1d(const Var& x, const Var& gamma, const Var& beta, Tensor* running_mean,
                Tensor* running_var, bool training, float momentum = 0.1f, float eps = 1e-5f);
Var layernorm(const Var& x, const Var& gamma, const Var& beta, float eps = 1e-5f);
Var dropout(const Var& x, float p, Rng& rng, bool training);
Var l2_normalize_rows(const Var& x, float eps = 1e-12f);

// ---- attention ----
Var split_heads(const Var& x, int64_t heads);            // [B,T,D] -> [B*H,T,D/H]
Var merge_heads(const Var& x, int64_t heads);            // [B*H,T,D/H] -> [B,T,D]
Var softmax_lastdim(const Var& x);
Var causal_softmax(const Var& scores);                   // [N,T,T], col > row masked

// ---- fused losses (double-precision internals) ----
// Mean cross-entropy over rows of logits [N,C]; optional per-class weights
// (weighted mean, PyTorch convention).
Var cross_entropy(const Var& logits, const std::vector<int>& labels,
                  const std::vector<float>& class_weights = {});
// NT-Xent over a 2N multiview batch; za/zb rows must be unit-norm.
Var nt_xent(const Var& za, const Var& zb, float tau);
// InfoNCE: scores[i][j] = pred_i . targets_j, positives on the diagonal.
Var info_nce(const Var& pred, const Var& targets);

// Value-only loss entry points (share the fused forward paths; double
// precision throughout, which the finite-difference checks rely on).
double nt_xent_value(const Tensor& za, const Tensor& zb, double tau);
double cross_entropy_value(const Tensor& logits, const std::vector<int>& labels,
                           const std::vector<float>& class_weights = {});
double info_nce_value(const Tensor& pred, const Tensor& targets);

}  // namespace sleepssl::nn
