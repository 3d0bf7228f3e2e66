#include "sleepssl/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <unordered_set>

#include "sleepssl/kernels.hpp"

namespace sleepssl::nn {

Tensor& Node::grad_ref() {
  if (grad.empty()) grad = Tensor::zeros(value.shape());
  return grad;
}

Var leaf(Tensor value, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  return n;
}

Var constant(Tensor value) { return leaf(std::move(value), false); }

void acc_grad(const Var& v, const Tensor& g) {
  if (!v->requires_grad) return;
  Tensor& dst = v->grad_ref();
  if (!dst.same_shape(g)) throw std::logic_error("acc_grad: shape mismatch");
  float* d = dst.data();
  const float* s = g.data();
  const int64_t n = g.numel();
  for (int64_t i = 0; i < n; ++i) d[i] += s[i];
}

namespace {

Var make_node(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->parents = std::move(parents);
  for (const auto& p : n->parents)
    if (p->requires_grad) {
      n->requires_grad = true;
      break;
    }
  if (n->requires_grad) n->backward_fn = std::move(backward_fn);
  return n;
}

void topo_sort(const Var& root, std::vector<Node*>& order) {
  // Iterative DFS; nodes appear after all their parents. The stack may
  // reallocate while children are pushed, so no references into it are held
  // across push_back.
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.push_back({root.get(), 0});
  visited.insert(root.get());
  while (!stack.empty()) {
    Node* node = stack.back().first;
    const size_t idx = stack.back().second;
    if (idx < node->parents.size()) {
      stack.back().second = idx + 1;
      Node* p = node->parents[idx].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (!a->value.same_shape(b->value))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                Tensor::shape_str(a->value.shape()) + " vs " +
                                Tensor::shape_str(b->value.shape()));
}

}  // namespace

void backward(const Var& root) {
  if (root->value.numel() != 1) throw std::invalid_argument("backward: root must be scalar");
  if (!root->requires_grad) return;
  std::vector<Node*> order;
  topo_sort(root, order);
  root->grad_ref()[0] = 1.0f;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && n->has_grad()) n->backward_fn(*n);
  }
}

// ---------------------------------------------------------------- elementwise

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  Tensor out = a->value;
  const float* bv = b->value.data();
  float* o = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) o[i] += bv[i];
  return make_node(std::move(out), {a, b}, [a, b](Node& self) {
    acc_grad(a, self.grad);
    acc_grad(b, self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  Tensor out = a->value;
  const float* bv = b->value.data();
  float* o = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) o[i] -= bv[i];
  return make_node(std::move(out), {a, b}, [a, b](Node& self) {
    acc_grad(a, self.grad);
    if (b->requires_grad) {
      Tensor g = self.grad;
      for (int64_t i = 0; i < g.numel(); ++i) g[i] = -g[i];
      acc_grad(b, g);
    }
  });
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  Tensor out = a->value;
  const float* bv = b->value.data();
  float* o = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) o[i] *= bv[i];
  return make_node(std::move(out), {a, b}, [a, b](Node& self) {
    const int64_t n = self.grad.numel();
    if (a->requires_grad) {
      Tensor g = self.grad;
      const float* bv2 = b->value.data();
      for (int64_t i = 0; i < n; ++i) g[i] *= bv2[i];
      acc_grad(a, g);
    }
    if (b->requires_grad) {
      Tensor g = self.grad;
      const float* av = a->value.data();
      for (int64_t i = 0; i < n; ++i) g[i] *= av[i];
      acc_grad(b, g);
    }
  });
}

Var scale(const Var& a, float s) {
  Tensor out = a->value;
  float* o = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) o[i] *= s;
  return make_node(std::move(out), {a}, [a, s](Node& self) {
    Tensor g = self.grad;
    for (int64_t i = 0; i < g.numel(); ++i) g[i] *= s;
    acc_grad(a, g);
  });
}

Var add_vars(const std::vector<Var>& xs) {
  if (xs.empty()) throw std::invalid_argument("add_vars: empty");
  Var acc = xs[0];
  for (size_t i = 1; i < xs.size(); ++i) acc = add(acc, xs[i]);
  return acc;
}

Var relu(const Var& x) {
  Tensor out = x->value;
  float* o = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) o[i] = o[i] > 0.0f ? o[i] : 0.0f;
  return make_node(std::move(out), {x}, [x](Node& self) {
    Tensor g = self.grad;
    const float* xv = x->value.data();
    for (int64_t i = 0; i < g.numel(); ++i)
      if (xv[i] <= 0.0f) g[i] = 0.0f;
    acc_grad(x, g);
  });
}

Var gelu(const Var& x) {
  Tensor out = x->value;
  float* o = out.data();
  const float inv_sqrt2 = 0.7071067811865476f;
  for (int64_t i = 0; i < out.numel(); ++i)
    o[i] = 0.5f * o[i] * (1.0f + std::erf(o[i] * inv_sqrt2));
  return make_node(std::move(out), {x}, [x](Node& self) {
    Tensor g = self.grad;
    const float* xv = x->value.data();
    const float inv_sqrt2 = 0.7071067811865476f;
    const float inv_sqrt2pi = 0.3989422804014327f;
    for (int64_t i = 0; i < g.numel(); ++i) {
      const float v = xv[i];
      const float cdf = 0.5f * (1.0f + std::erf(v * inv_sqrt2));
      const float pdf = inv_sqrt2pi * std::exp(-0.5f * v * v);
      g[i] *= cdf + v * pdf;
    }
    acc_grad(x, g);
  });
}

Var tanh_op(const Var& x) {
  Tensor out = x->value;
  float* o = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) o[i] = std::tanh(o[i]);
  Tensor saved = out;
  return make_node(std::move(out), {x}, [x, saved](Node& self) {
    Tensor g = self.grad;
    const float* y = saved.data();
    for (int64_t i = 0; i < g.numel(); ++i) g[i] *= 1.0f - y[i] * y[i];
    acc_grad(x, g);
  });
}

Var sigmoid_op(const Var& x) {
  Tensor out = x->value;
  float* o = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) o[i] = 1.0f / (1.0f + std::exp(-o[i]));
  Tensor saved = out;
  return make_node(std::move(out), {x}, [x, saved](Node& self) {
    Tensor g = self.grad;
    const float* y = saved.data();
    for (int64_t i = 0; i < g.numel(); ++i) g[i] *= y[i] * (1.0f - y[i]);
    acc_grad(x, g);
  });
}

// ---------------------------------------------------------------- shape ops

Var reshape(const Var& x, std::vector<int64_t> shape) {
  Tensor out = x->value.reshaped(std::move(shape));
  return make_node(std::move(out), {x}, [x](Node& self) {
    acc_grad(x, self.grad.reshaped(x->value.shape()));
  });
}

Var transpose12(const Var& x) {
  const auto& s = x->value.shape();
  if (s.size() != 3) throw std::invalid_argument("transpose12: rank-3 expected");
  const int64_t B = s[0], C = s[1], L = s[2];
  Tensor out({B, L, C});
  const float* xv = x->value.data();
  float* o = out.data();
  for (int64_t b = 0; b < B; ++b)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t l = 0; l < L; ++l) o[(b * L + l) * C + c] = xv[(b * C + c) * L + l];
  return make_node(std::move(out), {x}, [x, B, C, L](Node& self) {
    Tensor g({B, C, L});
    const float* sg = self.grad.data();
    float* gd = g.data();
    for (int64_t b = 0; b < B; ++b)
      for (int64_t l = 0; l < L; ++l)
        for (int64_t c = 0; c < C; ++c) gd[(b * C + c) * L + l] = sg[(b * L + l) * C + c];
    acc_grad(x, g);
  });
}

Var concat_dim1(const Var& a, const Var& b) {
  const auto& sa = a->value.shape();
  const auto& sb = b->value.shape();
  if (sa.size() != 3 || sb.size() != 3 || sa[0] != sb[0] || sa[2] != sb[2])
    throw std::invalid_argument("concat_dim1: incompatible shapes");
  const int64_t B = sa[0], C1 = sa[1], C2 = sb[1], L = sa[2];
  Tensor out({B, C1 + C2, L});
  for (int64_t bi = 0; bi < B; ++bi) {
    std::copy_n(a->value.data() + bi * C1 * L, C1 * L, out.data() + bi * (C1 + C2) * L);
    std::copy_n(b->value.data() + bi * C2 * L, C2 * L, out.data() + bi * (C1 + C2) * L + C1 * L);
  }
  return make_node(std::move(out), {a, b}, [a, b, B, C1, C2, L](Node& self) {
    if (a->requires_grad) {
      Tensor g({B, C1, L});
      for (int64_t bi = 0; bi < B; ++bi)
        std::copy_n(self.grad.data() + bi * (C1 + C2) * L, C1 * L, g.data() + bi * C1 * L);
      acc_grad(a, g);
    }
    if (b->requires_grad) {
      Tensor g({B, C2, L});
      for (int64_t bi = 0; bi < B; ++bi)
        std::copy_n(self.grad.data() + bi * (C1 + C2) * L + C1 * L, C2 * L, g.data() + bi * C2 * L);
      acc_grad(b, g);
    }
  });
}

Var slice_dim1(const Var& x, int64_t i0, int64_t i1) {
  const auto& s = x->value.shape();
  if (s.size() != 3) throw std::invalid_argument("slice_dim1: rank-3 expected");
  if (i0 < 0 || i1 > s[1] || i0 >= i1) throw std::invalid_argument("slice_dim1: bad range");
  const int64_t B = s[0], C = s[1], L = s[2], W = i1 - i0;
  Tensor out({B, W, L});
  for (int64_t b = 0; b < B; ++b)
    std::copy_n(x->value.data() + (b * C + i0) * L, W * L, out.data() + b * W * L);
  return make_node(std::move(out), {x}, [x, B, C, L, W, i0](Node& self) {
    Tensor g({B, C, L});
    for (int64_t b = 0; b < B; ++b)
      std::copy_n(self.grad.data() + b * W * L, W * L, g.data() + (b * C + i0) * L);
    acc_grad(x, g);
  });
}

Var slice_cols(const Var& x, int64_t c0, int64_t c1) {
  const auto& s = x->value.shape();
  if (s.size() != 2) throw std::invalid_argument("slice_cols: rank-2 expected");
  if (c0 < 0 || c1 > s[1] || c0 >= c1) throw std::invalid_argument("slice_cols: bad range");
  const int64_t N = s[0], D = s[1], W = c1 - c0;
  Tensor out({N, W});
  for (int64_t i = 0; i < N; ++i)
    std::copy_n(x->value.data() + i * D + c0, W, out.data() + i * W);
  return make_node(std::move(out), {x}, [x, N, D, W, c0](Node& self) {
    Tensor g({N, D});
    for (int64_t i = 0; i < N; ++i)
      std::copy_n(self.grad.data() + i * W, W, g.data() + i * D + c0);
    acc_grad(x, g);
  });
}

Var stack_dim1(const std::vector<Var>& xs) {
  if (xs.empty()) throw std::invalid_argument("stack_dim1: empty");
  const auto& s0 = xs[0]->value.shape();
  if (s0.size() != 2) throw std::invalid_argument("stack_dim1: rank-2 parts expected");
  const int64_t B = s0[0], D = s0[1], T = static_cast<int64_t>(xs.size());
  Tensor out({B, T, D});
  for (int64_t t = 0; t < T; ++t) {
    if (!xs[static_cast<size_t>(t)]->value.same_shape(xs[0]->value))
      throw std::invalid_argument("stack_dim1: ragged parts");
    const float* src = xs[static_cast<size_t>(t)]->value.data();
    for (int64_t b = 0; b < B; ++b)
      std::copy_n(src + b * D, D, out.data() + (b * T + t) * D);
  }
  std::vector<Var> parents = xs;
  return make_node(std::move(out), parents, [parents, B, T, D](Node& self) {
    for (int64_t t = 0; t < T; ++t) {
      const Var& p = parents[static_cast<size_t>(t)];
      if (!p->requires_grad) continue;
      Tensor g({B, D});
      for (int64_t b = 0; b < B; ++b)
        std::copy_n(self.grad.data() + (b * T + t) * D, D, g.data() + b * D);
      acc_grad(p, g);
    }
  });
}

Var squeeze_dim1(const Var& x) {
  const auto& s = x->value.shape();
  if (s.size() != 3 || s[1] != 1) throw std::invalid_argument("squeeze_dim1: [B,1,D] expected");
  return reshape(x, {s[0], s[2]});
}

Var mean_dim1(const Var& x) {
  const auto& s = x->value.shape();
  if (s.size() != 3) throw std::invalid_argument("mean_dim1: rank-3 expected");
  const int64_t B = s[0], T = s[1], D = s[2];
  Tensor out({B, D});
  const float* xv = x->value.data();
  for (int64_t b = 0; b < B; ++b)
    for (int64_t d = 0; d < D; ++d) {
      float acc = 0.0f;
      for (int64_t t = 0; t < T; ++t) acc += xv[(b * T + t) * D + d];
      out.at2(b, d) = acc / static_cast<float>(T);
    }
  return make_node(std::move(out), {x}, [x, B, T, D](Node& self) {
    Tensor g({B, T, D});
    const float inv = 1.0f / static_cast<float>(T);
    for (int64_t b = 0; b < B; ++b)
      for (int64_t t = 0; t < T; ++t)
        for (int64_t d = 0; d < D; ++d) g[(b * T + t) * D + d] = self.grad.at2(b, d) * inv;
    acc_grad(x, g);
  });
}

Var mean_dim2(const Var& x) {
  const auto& s = x->value.shape();
  if (s.size() != 3) throw std::invalid_argument("mean_dim2: rank-3 expected");
  const int64_t B = s[0], C = s[1], L = s[2];
  Tensor out({B, C});
  const float* xv = x->value.data();
  for (int64_t b = 0; b < B; ++b)
    for (int64_t c = 0; c < C; ++c) {
      float acc = 0.0f;
      const float* row = xv + (b * C + c) * L;
      for (int64_t l = 0; l < L; ++l) acc += row[l];
      out.at2(b, c) = acc / static_cast<float>(L);
    }
  return make_node(std::move(out), {x}, [x, B, C, L](Node& self) {
    Tensor g({B, C, L});
    const float inv = 1.0f / static_cast<float>(L);
    for (int64_t b = 0; b < B; ++b)
      for (int64_t c = 0; c < C; ++c) {
        const float gv = self.grad.at2(b, c) * inv;
        float* row = g.data() + (b * C + c) * L;
        for (int64_t l = 0; l < L; ++l) row[l] = gv;
      }
    acc_grad(x, g);
  });
}

Var broadcast_mul_rows(const Var& x, const Var& sfac) {
  const auto& s = x->value.shape();
  const auto& ss = sfac->value.shape();
  if (s.size() != 3 || ss.size() != 2 || s[0] != ss[0] || s[1] != ss[1])
    throw std::invalid_argument("broadcast_mul_rows: [B,C,L] and [B,C] expected");
  const int64_t B = s[0], C = s[1], L = s[2];
  Tensor out = x->value;
  for (int64_t b = 0; b < B; ++b)
    for (int64_t c = 0; c < C; ++c) {
      const float f = sfac->value.at2(b, c);
      float* row = out.data() + (b * C + c) * L;
      for (int64_t l = 0; l < L; ++l) row[l] *= f;
    }
  return make_node(std::move(out), {x, sfac}, [x, sfac, B, C, L](Node& self) {
    if (x->requires_grad) {
      Tensor g = self.grad;
      for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c) {
          const float f = sfac->value.at2(b, c);
          float* row = g.data() + (b * C + c) * L;
          for (int64_t l = 0; l < L; ++l) row[l] *= f;
        }
      acc_grad(x, g);
    }
    if (sfac->requires_grad) {
      Tensor g({B, C});
      for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c) {
          float acc = 0.0f;
          const float* gr = self.grad.data() + (b * C + c) * L;
          const float* xr = x->value.data() + (b * C + c) * L;
          for (int64_t l = 0; l < L; ++l) acc += gr[l] * xr[l];
          g.at2(b, c) = acc;
        }
      acc_grad(sfac, g);
    }
  });
}

// ---------------------------------------------------------------- linear algebra

Var matmul(const Var& a, const Var& b) {
  const auto& sa = a->value.shape();
  const auto& sb = b->value.shape();
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0])
    throw std::invalid_argument("matmul: incompatible shapes");
  const int64_t N = sa[0], K = sa[1], M = sb[1];
  Tensor out({N, M});
  kern::gemm(a->value.data(), b->value.data(), out.data(), N, K, M, false, false, false);
  return make_node(std::move(out), {a, b}, [a, b, N, K, M](Node& self) {
    if (a->requires_grad) {
      // dA += dC * B^T
      kern::gemm(self.grad.data(), b->value.data(), a->grad_ref().data(), N, M, K, false, true,
                 true);
    }
    if (b->requires_grad) {
      // dB += A^T * dC
      kern::gemm(a->value.data(), self.grad.data(), b->grad_ref().data(), K, N, M, true, false,
                 true);
    }
  });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  const auto& sx = x->value.shape();
  const auto& sw = w->value.shape();
  if (sx.size() != 2 || sw.size() != 2 || sx[1] != sw[0])
    throw std::invalid_argument("linear: incompatible shapes");
  if (b->value.numel() != sw[1]) throw std::invalid_argument("linear: bad bias");
  const int64_t N = sx[0], K = sx[1], M = sw[1];
  Tensor out({N, M});
  kern::gemm(x->value.data(), w->value.data(), out.data(), N, K, M, false, false, false);
  for (int64_t i = 0; i < N; ++i)
    for (int64_t j = 0; j < M; ++j) out.at2(i, j) += b->value[j];
  return make_node(std::move(out), {x, w, b}, [x, w, b, N, K, M](Node& self) {
    if (x->requires_grad)
      kern::gemm(self.grad.data(), w->value.data(), x->grad_ref().data(), N, M, K, false, true,
                 true);
    if (w->requires_grad)
      kern::gemm(x->value.data(), self.grad.data(), w->grad_ref().data(), K, N, M, true, false,
                 true);
    if (b->requires_grad) {
      Tensor& gb = b->grad_ref();
      for (int64_t i = 0; i < N; ++i)
        for (int64_t j = 0; j < M; ++j) gb[j] += self.grad.at2(i, j);
    }
  });
}

Var bmm(const Var& a, const Var& b) {
  const auto& sa = a->value.shape();
  const auto& sb = b->value.shape();
  if (sa.size() != 3 || sb.size() != 3 || sa[0] != sb[0] || sa[2] != sb[1])
    throw std::invalid_argument("bmm: incompatible shapes");
  const int64_t B = sa[0], N = sa[1], K = sa[2], M = sb[2];
  Tensor out({B, N, M});
  for (int64_t bi = 0; bi < B; ++bi)
    kern::gemm(a->value.data() + bi * N * K, b->value.data() + bi * K * M,
               out.data() + bi * N * M, N, K, M, false, false, false);
  return make_node(std::move(out), {a, b}, [a, b, B, N, K, M](Node& self) {
    for (int64_t bi = 0; bi < B; ++bi) {
      if (a->requires_grad)
        kern::gemm(self.grad.data() + bi * N * M, b->value.data() + bi * K * M,
                   a->grad_ref().data() + bi * N * K, N, M, K, false, true, true);
      if (b->requires_grad)
        kern::gemm(a->value.data() + bi * N * K, self.grad.data() + bi * N * M,
                   b->grad_ref().data() + bi * K * M, K, N, M, true, false, true);
    }
  });
}

// ---------------------------------------------------------------- conv / pool

Var conv1d(const Var& x, const Var& w, const Var& b, int64_t stride, int64_t pad) {
  const auto& sx = x->value.shape();
  const auto& sw = w->value.shape();
  if (sx.size() != 3 || sw.size() != 3 || sx[1] != sw[1])
    throw std::invalid_argument("conv1d: incompatible shapes");
  const int64_t B = sx[0], Cin = sx[1], L = sx[2], Cout = sw[0], K = sw[2];
  const int64_t Lo = kern::conv1d_out_len(L, K, stride, pad);
  if (Lo < 1) throw std::invalid_argument("conv1d: input too short for kernel/stride");
  Tensor out({B, Cout, Lo});
  kern::conv1d_forward(x->value.data(), w->value.data(), b ? b->value.data() : nullptr,
                       out.data(), B, Cin, L, Cout, K, stride, pad);
  std::vector<Var> parents = b ? std::vector<Var>{x, w, b} : std::vector<Var>{x, w};
  return make_node(std::move(out), std::move(parents),
                   [x, w, b, B, Cin, L, Cout, K, stride, pad, Lo](Node& self) {
                     if (x->requires_grad)
                       kern::conv1d_backward_input(self.grad.data(), w->value.data(),
                                                   x->grad_ref().data(), B, Cin, L, Cout, K,
                                                   stride, pad);
                     if (w->requires_grad || (b && b->requires_grad)) {
                       float* dw = w->requires_grad ? w->grad_ref().data() : nullptr;
                       float* db = (b && b->requires_grad) ? b->grad_ref().data() : nullptr;
                       if (dw)
                         kern::conv1d_backward_weight(x->value.data(), self.grad.data(), dw, db,
                                                      B, Cin, L, Cout, K, stride, pad);
                       else if (db)
                         for (int64_t bi = 0; bi < B; ++bi)
                           for (int64_t co = 0; co < Cout; ++co)
                             for (int64_t t = 0; t < Lo; ++t)
                               db[co] += self.grad[(bi * Cout + co) * Lo + t];
                     }
                   });
}

Var maxpool1d(const Var& x, int64_t k, int64_t stride, int64_t pad) {
  const auto& s = x->value.shape();
  if (s.size() != 3) throw std::invalid_argument("maxpool1d: rank-3 expected");
  const int64_t B = s[0], C = s[1], L = s[2];
  const int64_t Lo = (L + 2 * pad - k) / stride + 1;
  if (Lo < 1) throw std::invalid_argument("maxpool1d: input too short");
  Tensor out({B, C, Lo});
  auto argmax = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(B * C * Lo));
  const float* xv = x->value.data();
  for (int64_t b = 0; b < B; ++b)
    for (int64_t c = 0; c < C; ++c) {
      const float* row = xv + (b * C + c) * L;
      for (int64_t t = 0; t < Lo; ++t) {
        const int64_t start = t * stride - pad;
        float best = -std::numeric_limits<float>::infinity();
        int64_t best_i = -1;
        for (int64_t p = std::max<int64_t>(0, start);
             p < std::min<int64_t>(L, start + k); ++p)
          if (row[p] > best) {
            best = row[p];
            best_i = p;
          }
        if (best_i < 0) throw std::invalid_argument("maxpool1d: empty window");
        out[(b * C + c) * Lo + t] = best;
        (*argmax)[static_cast<size_t>((b * C + c) * Lo + t)] = best_i;
      }
    }
  return make_node(std::move(out), {x}, [x, argmax, B, C, L, Lo](Node& self) {
    Tensor g({B, C, L});
    for (int64_t b = 0; b < B; ++b)
      for (int64_t c = 0; c < C; ++c)
        for (int64_t t = 0; t < Lo; ++t)
          g[(b * C + c) * L + (*argmax)[static_cast<size_t>((b * C + c) * Lo + t)]] +=
              self.grad[(b * C + c) * Lo + t];
    acc_grad(x, g);
  });
}

Var adaptive_avg_pool1d(const Var& x, int64_t out_len) {
  const auto& s = x->value.shape();
  if (s.size() != 3) throw std::invalid_argument("adaptive_avg_pool1d: rank-3 expected");
  const int64_t B = s[0], C = s[1], L = s[2];
  if (out_len < 1 || out_len > L) throw std::invalid_argument("adaptive_avg_pool1d: bad out_len");
  Tensor out({B, C, out_len});
  const float* xv = x->value.data();
  for (int64_t b = 0; b < B; ++b)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t t = 0; t < out_len; ++t) {
        const int64_t lo = t * L / out_len;
        const int64_t hi = (t + 1) * L / out_len;
        float acc = 0.0f;
        for (int64_t p = lo; p < hi; ++p) acc += xv[(b * C + c) * L + p];
        out[(b * C + c) * out_len + t] = acc / static_cast<float>(hi - lo);
      }
  return make_node(std::move(out), {x}, [x, B, C, L, out_len](Node& self) {
    Tensor g({B, C, L});
    for (int64_t b = 0; b < B; ++b)
      for (int64_t c = 0; c < C; ++c)
        for (int64_t t = 0; t < out_len; ++t) {
          const int64_t lo = t * L / out_len;
          const int64_t hi = (t + 1) * L / out_len;
          const float gv = self.grad[(b * C + c) * out_len + t] / static_cast<float>(hi - lo);
          for (int64_t p = lo; p < hi; ++p) g[(b * C + c) * L + p] += gv;
        }
    acc_grad(x, g);
  });
}

// ---------------------------------------------------------------- normalization

Var batchnorm1d(const Var& x, const Var& gamma, const Var& beta, Tensor* running_mean,
                Tensor* running_var, bool training, float momentum, float eps) {
  const auto& s = x->value.shape();
  if (s.size() != 3) throw std::invalid_argument("batchnorm1d: rank-3 expected");
  const int64_t B = s[0], C = s[1], L = s[2];
  if (gamma->value.numel() != C || beta->value.numel() != C)
    throw std::invalid_argument("batchnorm1d: bad affine params");
  Tensor out({B, C, L});
  auto mean = std::make_shared<Tensor>(std::vector<int64_t>{C});
  auto invstd = std::make_shared<Tensor>(std::vector<int64_t>{C});
  auto xhat = std::make_shared<Tensor>(std::vector<int64_t>{B, C, L});
  const float* xv = x->value.data();
  const int64_t n = B * L;
  for (int64_t c = 0; c < C; ++c) {
    float m, v;
    if (training) {
      double acc = 0.0;
      for (int64_t b = 0; b < B; ++b) {
        const float* row = xv + (b * C + c) * L;
        for (int64_t l = 0; l < L; ++l) acc += row[l];
      }
      m = static_cast<float>(acc / n);
      double vacc = 0.0;
      for (int64_t b = 0; b < B; ++b) {
        const float* row = xv + (b * C + c) * L;
        for (int64_t l = 0; l < L; ++l) {
          const double d = row[l] - m;
          vacc += d * d;
        }
      }
      v = static_cast<float>(vacc / n);  // biased, as used for normalization
      if (running_mean && running_var) {
        // PyTorch tracks the unbiased variance in the running buffer.
        const float unbiased = n > 1 ? v * static_cast<float>(n) / static_cast<float>(n - 1) : v;
        (*running_mean)[c] = (1.0f - momentum) * (*running_mean)[c] + momentum * m;
        (*running_var)[c] = (1.0f - momentum) * (*running_var)[c] + momentum * unbiased;
      }
    } else {
      if (!running_mean || !running_var)
        throw std::invalid_argument("batchnorm1d: eval mode needs running stats");
      m = (*running_mean)[c];
      v = (*running_var)[c];
    }
    (*mean)[c] = m;
    (*invstd)[c] = 1.0f / std::sqrt(v + eps);
  }
  const float* gm = gamma->value.data();
  const float* bt = beta->value.data();
  for (int64_t b = 0; b < B; ++b)
    for (int64_t c = 0; c < C; ++c) {
      const float* row = xv + (b * C + c) * L;
      float* hrow = xhat->data() + (b * C + c) * L;
      float* orow = out.data() + (b * C + c) * L;
      const float mc = (*mean)[c], ic = (*invstd)[c];
      for (int64_t l = 0; l < L; ++l) {
        hrow[l] = (row[l] - mc) * ic;
        orow[l] = gm[c] * hrow[l] + bt[c];
      }
    }
  return make_node(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, mean, invstd, xhat, training, B, C, L, n](Node& self) {
        const float* gm = gamma->value.data();
        if (gamma->requires_grad || beta->requires_grad) {
          for (int64_t c = 0; c < C; ++c) {
            double dg = 0.0, db = 0.0;
            for (int64_t b = 0; b < B; ++b) {
              const float* grow = self.grad.data() + (b * C + c) * L;
              const float* hrow = xhat->data() + (b * C + c) * L;
              for (int64_t l = 0; l < L; ++l) {
                dg += grow[l] * hrow[l];
                db += grow[l];
              }
            }
            if (gamma->requires_grad) gamma->grad_ref()[c] += static_cast<float>(dg);
            if (beta->requires_grad) beta->grad_ref()[c] += static_cast<float>(db);
          }
        }
        if (!x->requires_grad) return;
        Tensor g({B, C, L});
        if (!training) {
          for (int64_t b = 0; b < B; ++b)
            for (int64_t c = 0; c < C; ++c) {
              const float k = gm[c] * (*invstd)[c];
              const float* grow = self.grad.data() + (b * C + c) * L;
              float* out_row = g.data() + (b * C + c) * L;
              for (int64_t l = 0; l < L; ++l) out_row[l] = grow[l] * k;
            }
        } else {
          for (int64_t c = 0; c < C; ++c) {
            double sum_dy = 0.0, sum_dyh = 0.0;
            for (int64_t b = 0; b < B; ++b) {
              const float* grow = self.grad.data() + (b * C + c) * L;
              const float* hrow = xhat->data() + (b * C + c) * L;
              for (int64_t l = 0; l < L; ++l) {
                sum_dy += grow[l];
                sum_dyh += grow[l] * hrow[l];
              }
            }
            const float k = gm[c] * (*invstd)[c] / static_cast<float>(n);
            for (int64_t b = 0; b < B; ++b) {
              const float* grow = self.grad.data() + (b * C + c) * L;
              const float* hrow = xhat->data() + (b * C + c) * L;
              float* out_row = g.data() + (b * C + c) * L;
              for (int64_t l = 0; l < L; ++l)
                out_row[l] = k * (n * grow[l] - static_cast<float>(sum_dy) -
                                  hrow[l] * static_cast<float>(sum_dyh));
            }
          }
        }
        acc_grad(x, g);
      });
}

Var layernorm(const Var& x, const Var& gamma, const Var& beta, float eps) {
  const auto& s = x->value.shape();
  const int64_t D = s.back();
  if (gamma->value.numel() != D || beta->value.numel() != D)
    throw std::invalid_argument("layernorm: bad affine params");
  const int64_t R = x->value.numel() / D;
  Tensor out(x->value.shape());
  auto xhat = std::make_shared<Tensor>(x->value.shape());
  auto invstd = std::make_shared<Tensor>(std::vector<int64_t>{R});
  const float* xv = x->value.data();
  const float* gm = gamma->value.data();
  const float* bt = beta->value.data();
  for (int64_t r = 0; r < R; ++r) {
    const float* row = xv + r * D;
    double acc = 0.0;
    for (int64_t d = 0; d < D; ++d) acc += row[d];
    const float m = static_cast<float>(acc / D);
    double vacc = 0.0;
    for (int64_t d = 0; d < D; ++d) {
      const double dd = row[d] - m;
      vacc += dd * dd;
    }
    const float is = 1.0f / std::sqrt(static_cast<float>(vacc / D) + eps);
    (*invstd)[r] = is;
    float* hrow = xhat->data() + r * D;
    float* orow = out.data() + r * D;
    for (int64_t d = 0; d < D; ++d) {
      hrow[d] = (row[d] - m) * is;
      orow[d] = gm[d] * hrow[d] + bt[d];
    }
  }
  return make_node(std::move(out), {x, gamma, beta},
                   [x, gamma, beta, xhat, invstd, R, D](Node& self) {
                     const float* gm = gamma->value.data();
                     if (gamma->requires_grad || beta->requires_grad) {
                       for (int64_t d = 0; d < D; ++d) {
                         double dg = 0.0, db = 0.0;
                         for (int64_t r = 0; r < R; ++r) {
                           dg += self.grad[r * D + d] * (*xhat)[r * D + d];
                           db += self.grad[r * D + d];
                         }
                         if (gamma->requires_grad) gamma->grad_ref()[d] += static_cast<float>(dg);
                         if (beta->requires_grad) beta->grad_ref()[d] += static_cast<float>(db);
                       }
                     }
                     if (!x->requires_grad) return;
                     Tensor g(x->value.shape());
                     for (int64_t r = 0; r < R; ++r) {
                       double sum_dy = 0.0, sum_dyh = 0.0;
                       for (int64_t d = 0; d < D; ++d) {
                         const double dy = self.grad[r * D + d] * gm[d];
                         sum_dy += dy;
                         sum_dyh += dy * (*xhat)[r * D + d];
                       }
                       const float is = (*invstd)[r];
                       for (int64_t d = 0; d < D; ++d) {
                         const float dy = self.grad[r * D + d] * gm[d];
                         g[r * D + d] =
                             is * (dy - static_cast<float>(sum_dy / D) -
                                   (*xhat)[r * D + d] * static_cast<float>(sum_dyh / D));
                       }
                     }
                     acc_grad(x, g);
                   });
}

Var dropout(const Var& x, float p, Rng& rng, bool training) {
  if (!training || p <= 0.0f) return x;
  if (p >= 1.0f) throw std::invalid_argument("dropout: p must be < 1");
  const float keep = 1.0f - p;
  auto mask = std::make_shared<Tensor>(x->value.shape());
  Tensor out = x->value;
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (int64_t i = 0; i < out.numel(); ++i) {
    const float m = u(rng.engine()) < keep ? 1.0f / keep : 0.0f;
    (*mask)[i] = m;
    out[i] *= m;
  }
  return make_node(std::move(out), {x}, [x, mask](Node& self) {
    Tensor g = self.grad;
    for (int64_t i = 0; i < g.numel(); ++i) g[i] *= (*mask)[i];
    acc_grad(x, g);
  });
}

Var l2_normalize_rows(const Var& x, float eps) {
  const auto& s = x->value.shape();
  if (s.size() != 2) throw std::invalid_argument("l2_normalize_rows: rank-2 expected");
  const int64_t N = s[0], D = s[1];
  Tensor out({N, D});
  auto norms = std::make_shared<Tensor>(std::vector<int64_t>{N});
  const float* xv = x->value.data();
  for (int64_t i = 0; i < N; ++i) {
    double acc = 0.0;
    const float* row = xv + i * D;
    for (int64_t d = 0; d < D; ++d) acc += static_cast<double>(row[d]) * row[d];
    const float nrm = std::sqrt(static_cast<float>(acc)) + eps;
    (*norms)[i] = nrm;
    for (int64_t d = 0; d < D; ++d) out.at2(i, d) = row[d] / nrm;
  }
  Tensor saved = out;
  return make_node(std::move(out), {x}, [x, norms, saved, N, D](Node& self) {
    // d/dx (x/||x||) = (I - y y^T) / ||x||
    Tensor g({N, D});
    for (int64_t i = 0; i < N; ++i) {
      const float* yrow = saved.data() + i * D;
      const float* grow = self.grad.data() + i * D;
      double dot = 0.0;
      for (int64_t d = 0; d < D; ++d) dot += static_cast<double>(grow[d]) * yrow[d];
      const float inv = 1.0f / (*norms)[i];
      for (int64_t d = 0; d < D; ++d)
        g.at2(i, d) = (grow[d] - static_cast<float>(dot) * yrow[d]) * inv;
    }
    acc_grad(x, g);
  });
}

// ---------------------------------------------------------------- attention

Var split_heads(const Var& x, int64_t heads) {
  const auto& s = x->value.shape();
  if (s.size() != 3 || s[2] % heads != 0)
    throw std::invalid_argument("split_heads: dim not divisible by heads");
  const int64_t B = s[0], T = s[1], D = s[2], Dh = D / heads;
  Tensor out({B * heads, T, Dh});
  const float* xv = x->value.data();
  for (int64_t b = 0; b < B; ++b)
    for (int64_t h = 0; h < heads; ++h)
      for (int64_t t = 0; t < T; ++t)
        std::copy_n(xv + (b * T + t) * D + h * Dh, Dh,
                    out.data() + ((b * heads + h) * T + t) * Dh);
  return make_node(std::move(out), {x}, [x, heads, B, T, D, Dh](Node& self) {
    Tensor g({B, T, D});
    for (int64_t b = 0; b < B; ++b)
      for (int64_t h = 0; h < heads; ++h)
        for (int64_t t = 0; t < T; ++t)
          std::copy_n(self.grad.data() + ((b * heads + h) * T + t) * Dh, Dh,
                      g.data() + (b * T + t) * D + h * Dh);
    acc_grad(x, g);
  });
}

Var merge_heads(const Var& x, int64_t heads) {
  const auto& s = x->value.shape();
  if (s.size() != 3 || s[0] % heads != 0)
    throw std::invalid_argument("merge_heads: batch not divisible by heads");
  const int64_t B = s[0] / heads, T = s[1], Dh = s[2], D = Dh * heads;
  Tensor out({B, T, D});
  const float* xv = x->value.data();
  for (int64_t b = 0; b < B; ++b)
    for (int64_t h = 0; h < heads; ++h)
      for (int64_t t = 0; t < T; ++t)
        std::copy_n(xv + ((b * heads + h) * T + t) * Dh, Dh,
                    out.data() + (b * T + t) * D + h * Dh);
  return make_node(std::move(out), {x}, [x, heads, B, T, D, Dh](Node& self) {
    Tensor g({B * heads, T, Dh});
    for (int64_t b = 0; b < B; ++b)
      for (int64_t h = 0; h < heads; ++h)
        for (int64_t t = 0; t < T; ++t)
          std::copy_n(self.grad.data() + (b * T + t) * D + h * Dh, Dh,
                      g.data() + ((b * heads + h) * T + t) * Dh);
    acc_grad(x, g);
  });
}

namespace {

Var softmax_impl(const Var& x, bool causal) {
  const auto& s = x->value.shape();
  if (causal && (s.size() != 3 || s[1] != s[2]))
    throw std::invalid_argument("causal_softmax: [N,T,T] expected");
  const int64_t D = s.back();
  const int64_t R = x->value.numel() / D;
  const int64_t T = causal ? s[1] : 0;
  Tensor out(x->value.shape());
  const float* xv = x->value.data();
  for (int64_t r = 0; r < R; ++r) {
    const int64_t valid = causal ? (r % T) + 1 : D;  // row index within the T x T block
    const float* row = xv + r * D;
    float* orow = out.data() + r * D;
    float mx = -std::numeric_limits<float>::infinity();
    for (int64_t d = 0; d < valid; ++d) mx = std::max(mx, row[d]);
    double denom = 0.0;
    for (int64_t d = 0; d < valid; ++d) denom += std::exp(static_cast<double>(row[d]) - mx);
    for (int64_t d = 0; d < valid; ++d)
      orow[d] = static_cast<float>(std::exp(static_cast<double>(row[d]) - mx) / denom);
    for (int64_t d = valid; d < D; ++d) orow[d] = 0.0f;
  }
  Tensor saved = out;
  return make_node(std::move(out), {x}, [x, saved, R, D, T, causal](Node& self) {
    Tensor g(x->value.shape());
    for (int64_t r = 0; r < R; ++r) {
      const int64_t valid = causal ? (r % T) + 1 : D;
      const float* y = saved.data() + r * D;
      const float* dy = self.grad.data() + r * D;
      double dot = 0.0;
      for (int64_t d = 0; d < valid; ++d) dot += static_cast<double>(dy[d]) * y[d];
      float* grow = g.data() + r * D;
      for (int64_t d = 0; d < valid; ++d)
        grow[d] = (dy[d] - static_cast<float>(dot)) * y[d];
    }
    acc_grad(x, g);
  });
}

}  // namespace

Var softmax_lastdim(const Var& x) { return softmax_impl(x, false); }
Var causal_softmax(const Var& scores) { return softmax_impl(scores, true); }

// ---------------------------------------------------------------- fused losses

namespace {

struct CeForward {
  double loss = 0.0;
  double wsum = 0.0;
  std::vector<double> probs;  // N x C
  std::vector<double> w;      // per class
};

CeForward ce_forward(const Tensor& logits, const std::vector<int>& labels,
                     const std::vector<float>& class_weights) {
  if (logits.rank() != 2) throw std::invalid_argument("cross_entropy: rank-2 logits expected");
  const int64_t N = logits.dim(0), C = logits.dim(1);
  if (N == 0) throw std::invalid_argument("cross_entropy: empty batch");
  if (static_cast<int64_t>(labels.size()) != N)
    throw std::invalid_argument("cross_entropy: labels size mismatch");
  CeForward f;
  f.w.assign(static_cast<size_t>(C), 1.0);
  if (!class_weights.empty()) {
    if (static_cast<int64_t>(class_weights.size()) != C)
      throw std::invalid_argument("cross_entropy: weights size mismatch");
    for (int64_t c = 0; c < C; ++c)
      f.w[static_cast<size_t>(c)] = class_weights[static_cast<size_t>(c)];
  }
  const float* lv = logits.data();
  f.probs.resize(static_cast<size_t>(N * C));
  for (int64_t i = 0; i < N; ++i) {
    const int y = labels[static_cast<size_t>(i)];
    if (y < 0 || y >= C) throw std::invalid_argument("cross_entropy: label out of range");
    const float* row = lv + i * C;
    double mx = row[0];
    for (int64_t c = 1; c < C; ++c) mx = std::max(mx, static_cast<double>(row[c]));
    double denom = 0.0;
    for (int64_t c = 0; c < C; ++c) denom += std::exp(row[c] - mx);
    const double lse = mx + std::log(denom);
    for (int64_t c = 0; c < C; ++c)
      f.probs[static_cast<size_t>(i * C + c)] = std::exp(row[c] - lse);
    const double wi = f.w[static_cast<size_t>(y)];
    f.loss += wi * (lse - row[y]);
    f.wsum += wi;
  }
  f.loss /= f.wsum;
  return f;
}

}  // namespace

double cross_entropy_value(const Tensor& logits, const std::vector<int>& labels,
                           const std::vector<float>& class_weights) {
  return ce_forward(logits, labels, class_weights).loss;
}

Var cross_entropy(const Var& logits, const std::vector<int>& labels,
                  const std::vector<float>& class_weights) {
  CeForward fwd = ce_forward(logits->value, labels, class_weights);
  const int64_t N = logits->value.dim(0), C = logits->value.dim(1);
  const double loss = fwd.loss;
  const double wsum = fwd.wsum;
  auto probs = std::make_shared<std::vector<double>>(std::move(fwd.probs));
  auto labels_copy = std::make_shared<std::vector<int>>(labels);
  auto wcopy = std::make_shared<std::vector<double>>(std::move(fwd.w));
  return make_node(Tensor::scalar(static_cast<float>(loss)), {logits},
                   [logits, probs, labels_copy, wcopy, wsum, N, C](Node& self) {
                     const float g0 = self.grad[0];
                     Tensor g({N, C});
                     for (int64_t i = 0; i < N; ++i) {
                       const int y = (*labels_copy)[static_cast<size_t>(i)];
                       const double wi = (*wcopy)[static_cast<size_t>(y)];
                       for (int64_t c = 0; c < C; ++c) {
                         double d = wi * (*probs)[static_cast<size_t>(i * C + c)];
                         if (c == y) d -= wi;
                         g.at2(i, c) = static_cast<float>(d / wsum) * g0;
                       }
                     }
                     acc_grad(logits, g);
                   });
}

namespace {

struct NtXentForward {
  std::vector<double> z;        // 2N x D
  std::vector<double> softmax;  // 2N x 2N over A(i) (diagonal zero)
  double loss = 0.0;
  int64_t n = 0, d = 0;
};

// Shared by the autodiff node and the value-only entry point.
NtXentForward nt_xent_forward(const Tensor& za, const Tensor& zb, double tau) {
  if (za.rank() != 2 || !za.same_shape(zb))
    throw std::invalid_argument("nt_xent: projections must be equal-shape [N,p]");
  if (tau <= 0.0) throw std::invalid_argument("nt_xent: tau must be > 0");
  const int64_t N = za.dim(0), D = za.dim(1);
  if (N < 1) throw std::invalid_argument("nt_xent: batch must be >= 1");
  NtXentForward f;
  f.n = N;
  f.d = D;
  const int64_t M = 2 * N;
  f.z.resize(static_cast<size_t>(M * D));
  for (int64_t i = 0; i < N; ++i)
    for (int64_t k = 0; k < D; ++k) {
      f.z[static_cast<size_t>(i * D + k)] = za.at2(i, k);
      f.z[static_cast<size_t>((i + N) * D + k)] = zb.at2(i, k);
    }
  for (int64_t i = 0; i < M; ++i) {
    double nrm = 0.0;
    for (int64_t k = 0; k < D; ++k) nrm += f.z[static_cast<size_t>(i * D + k)] * f.z[static_cast<size_t>(i * D + k)];
    if (std::abs(std::sqrt(nrm) - 1.0) > 1e-4)
      throw std::invalid_argument("nt_xent: rows must be L2-normalized");
  }
  std::vector<double> sim(static_cast<size_t>(M * M));
  for (int64_t i = 0; i < M; ++i)
    for (int64_t j = 0; j < M; ++j) {
      double dot = 0.0;
      for (int64_t k = 0; k < D; ++k)
        dot += f.z[static_cast<size_t>(i * D + k)] * f.z[static_cast<size_t>(j * D + k)];
      sim[static_cast<size_t>(i * M + j)] = dot / tau;
    }
  f.softmax.assign(static_cast<size_t>(M * M), 0.0);
  double loss = 0.0;
  for (int64_t i = 0; i < M; ++i) {
    const int64_t pos = (i + N) % M;
    double mx = -std::numeric_limits<double>::infinity();
    for (int64_t a = 0; a < M; ++a)
      if (a != i) mx = std::max(mx, sim[static_cast<size_t>(i * M + a)]);
    double denom = 0.0;
    for (int64_t a = 0; a < M; ++a)
      if (a != i) denom += std::exp(sim[static_cast<size_t>(i * M + a)] - mx);
    for (int64_t a = 0; a < M; ++a)
      if (a != i)
        f.softmax[static_cast<size_t>(i * M + a)] =
            std::exp(sim[static_cast<size_t>(i * M + a)] - mx) / denom;
    loss += -(sim[static_cast<size_t>(i * M + pos)] - mx - std::log(denom));
  }
  f.loss = loss / static_cast<double>(M);
  return f;
}

}  // namespace

double nt_xent_value(const Tensor& za, const Tensor& zb, double tau) {
  return nt_xent_forward(za, zb, tau).loss;
}

Var nt_xent(const Var& za, const Var& zb, float tau) {
  auto f = std::make_shared<NtXentForward>(nt_xent_forward(za->value, zb->value, tau));
  const double tau_d = tau;
  return make_node(
      Tensor::scalar(static_cast<float>(f->loss)), {za, zb}, [za, zb, f, tau_d](Node& self) {
        const int64_t N = f->n, D = f->d, M = 2 * N;
        // dL/dS[i][a] = (softmax[i][a] - [a == pos(i)]) / M for a != i.
        // S[i][a] = z_i . z_a / tau contributes to both z_i and z_a.
        std::vector<double> dz(static_cast<size_t>(M * D), 0.0);
        const double inv_m = 1.0 / static_cast<double>(M);
        for (int64_t i = 0; i < M; ++i) {
          const int64_t pos = (i + N) % M;
          for (int64_t a = 0; a < M; ++a) {
            if (a == i) continue;
            double ds = f->softmax[static_cast<size_t>(i * M + a)] * inv_m;
            if (a == pos) ds -= inv_m;
            ds /= tau_d;
            for (int64_t k = 0; k < D; ++k) {
              dz[static_cast<size_t>(i * D + k)] += ds * f->z[static_cast<size_t>(a * D + k)];
              dz[static_cast<size_t>(a * D + k)] += ds * f->z[static_cast<size_t>(i * D + k)];
            }
          }
        }
        const float g0 = self.grad[0];
        if (za->requires_grad) {
          Tensor g({N, D});
          for (int64_t i = 0; i < N; ++i)
            for (int64_t k = 0; k < D; ++k)
              g.at2(i, k) = static_cast<float>(dz[static_cast<size_t>(i * D + k)]) * g0;
          acc_grad(za, g);
        }
        if (zb->requires_grad) {
          Tensor g({N, D});
          for (int64_t i = 0; i < N; ++i)
            for (int64_t k = 0; k < D; ++k)
              g.at2(i, k) = static_cast<float>(dz[static_cast<size_t>((i + N) * D + k)]) * g0;
          acc_grad(zb, g);
        }
      });
}

namespace {

struct InfoNceForward {
  double loss = 0.0;
  std::vector<double> probs;  // B x B
};

InfoNceForward info_nce_forward(const Tensor& pred, const Tensor& targets) {
  if (pred.rank() != 2 || !pred.same_shape(targets))
    throw std::invalid_argument("info_nce: pred/targets must be equal-shape [B,d]");
  const int64_t B = pred.dim(0), D = pred.dim(1);
  if (B < 2) throw std::invalid_argument("info_nce: batch must be >= 2 (needs negatives)");
  InfoNceForward f;
  f.probs.resize(static_cast<size_t>(B * B));
  const float* pv = pred.data();
  const float* tv = targets.data();
  for (int64_t i = 0; i < B; ++i) {
    std::vector<double> srow(static_cast<size_t>(B));
    double mx = -std::numeric_limits<double>::infinity();
    for (int64_t j = 0; j < B; ++j) {
      double dot = 0.0;
      for (int64_t k = 0; k < D; ++k)
        dot += static_cast<double>(pv[i * D + k]) * tv[j * D + k];
      srow[static_cast<size_t>(j)] = dot;
      mx = std::max(mx, dot);
    }
    double denom = 0.0;
    for (int64_t j = 0; j < B; ++j) denom += std::exp(srow[static_cast<size_t>(j)] - mx);
    for (int64_t j = 0; j < B; ++j)
      f.probs[static_cast<size_t>(i * B + j)] = std::exp(srow[static_cast<size_t>(j)] - mx) / denom;
    f.loss += -(srow[static_cast<size_t>(i)] - mx - std::log(denom));
  }
  f.loss /= static_cast<double>(B);
  return f;
}

}  // namespace

double info_nce_value(const Tensor& pred, const Tensor& targets) {
  return info_nce_forward(pred, targets).loss;
}

Var info_nce(const Var& pred, const Var& targets) {
  const int64_t B = pred->value.dim(0), D = pred->value.dim(1);
  InfoNceForward fwd = info_nce_forward(pred->value, targets->value);
  const double loss = fwd.loss;
  auto probs = std::make_shared<std::vector<double>>(std::move(fwd.probs));
  return make_node(
      Tensor::scalar(static_cast<float>(loss)), {pred, targets},
      [pred, targets, probs, B, D](Node& self) {
        const float g0 = self.grad[0];
        const float* pv = pred->value.data();
        const float* tv = targets->value.data();
        const double inv_b = 1.0 / static_cast<double>(B);
        if (pred->requires_grad) {
          Tensor g({B, D});
          for (int64_t i = 0; i < B; ++i)
            for (int64_t j = 0; j < B; ++j) {
              double ds = (*probs)[static_cast<size_t>(i * B + j)] * inv_b;
              if (i == j) ds -= inv_b;
              for (int64_t k = 0; k < D; ++k)
                g.at2(i, k) += static_cast<float>(ds * tv[j * D + k]);
            }
          for (int64_t i = 0; i < B * D; ++i) g[i] *= g0;
          acc_grad(pred, g);
        }
        if (targets->requires_grad) {
          Tensor g({B, D});
          for (int64_t i = 0; i < B; ++i)
            for (int64_t j = 0; j < B; ++j) {
              double ds = (*probs)[static_cast<size_t>(i * B + j)] * inv_b;
              if (i == j) ds -= inv_b;
              for (int64_t k = 0; k < D; ++k)
                g.at2(j, k) += static_cast<float>(ds * pv[i * D + k]);
            }
          for (int64_t i = 0; i < B * D; ++i) g[i] *= g0;
          acc_grad(targets, g);
        }
      });
}

}  // namespace sleepssl::nn
