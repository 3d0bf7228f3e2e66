#pragma once

#include <cstdint>

#include "sleepssl/parallel.hpp"

// Low-level compute kernels. Each comes in a _serial and an _omp flavor with
// identical per-element summation order; the unsuffixed entry point dispatches
// on parallel::mode(). The serial flavor is the reference the tests compare
// against.
namespace sleepssl::kern {

// C[n,m] (+)= A op B with optional transposes. A is [n,k] (or [k,n] when
// trans_a), B is [k,m] (or [m,k] when trans_b). When accumulate is false C is
// overwritten.
void gemm_serial(const float* a, const float* b, float* c, int64_t n, int64_t k, int64_t m,
                 bool trans_a, bool trans_b, bool accumulate);
void gemm_omp(const float* a, const float* b, float* c, int64_t n, int64_t k, int64_t m,
              bool trans_a, bool trans_b, bool accumulate);
void gemm(const float* a, const float* b, float* c, int64_t n, int64_t k, int64_t m,
          bool trans_a, bool trans_b, bool accumulate);

// 1-D convolution over [B, Cin, L] with weights [Cout, Cin, K] -> [B, Cout, Lout],
// Lout = (L + 2*pad - K) / stride + 1.
void conv1d_forward_serial(const float* x, const float* w, const float* bias, float* y,
                           int64_t b, int64_t cin, int64_t l, int64_t cout, int64_t k,
                           int64_t stride, int64_t pad);
void conv1d_forward_omp(const float* x, const float* w, const float* bias, float* y,
                        int64_t b, int64_t cin, int64_t l, int64_t cout, int64_t k,
                        int64_t stride, int64_t pad);
void conv1d_forward(const float* x, const float* w, const float* bias, float* y,
                    int64_t b, int64_t cin, int64_t l, int64_t cout, int64_t k,
                    int64_t stride, int64_t pad);

// Gradient of conv1d wrt input; dx is accumulated into (caller zeroes).
void conv1d_backward_input_serial(const float* dy, const float* w, float* dx,
                                  int64_t b, int64_t cin, int64_t l, int64_t cout, int64_t k,
                                  int64_t stride, int64_t pad);
void conv1d_backward_input_omp(const float* dy, const float* w, float* dx,
                               int64_t b, int64_t cin, int64_t l, int64_t cout, int64_t k,
                               int64_t stride, int64_t pad);
void conv1d_backward_input(const float* dy, const float* w, float* dx,
                           int64_t b, int64_t cin, int64_t l, int64_t cout, int64_t k,
                           int64_t stride, int64_t pad);

// Gradient of conv1d wrt weights and bias; dw/db accumulated into.
void conv1d_backward_weight_serial(const float* x, const float* dy, float* dw, float* db,
                                   int64_t b, int64_t cin, int64_t l, int64_t cout, int64_t k,
                                   int64_t stride, int64_t pad);
void conv1d_backward_weight_omp(const float* x, const float* dy, float* dw, float* db,
                                int64_t b, int64_t cin, int64_t l, int64_t cout, int64_t k,
                                int64_t stride, int64_t pad);
void conv1d_backward_weight(const float* x, const float* dy, float* dw, float* db,
                            int64_t b, int64_t cin, int64_t l, int64_t cout, int64_t k,
                            int64_t stride, int64_t pad);

inline int64_t conv1d_out_len(int64_t l, int64_t k, int64_t stride, int64_t pad) {
  return (l + 2 * pad - k) / stride + 1;
}

}  // namespace sleepssl::kern
