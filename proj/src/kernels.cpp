#include "sleepssl/kernels.hpp"

#include <omp.h>

#include <algorithm>

namespace sleepssl::parallel {

namespace {
Mode g_mode = Mode::OpenMP;
}

Mode mode() { return g_mode; }
void set_mode(Mode m) { g_mode = m; }
int max_threads() { return omp_get_max_threads(); }

}  // namespace sleepssl::parallel

namespace sleepssl::kern {

namespace {

inline const float* row(const float* m, int64_t i, int64_t stride) { return m + i * stride; }

// Single-output-element dot product; both flavors call this so the summation
// order per element is identical.
inline float gemm_cell(const float* a, const float* b, int64_t i, int64_t j, int64_t k,
                       int64_t n, int64_t m, bool trans_a, bool trans_b) {
  float acc = 0.0f;
  if (!trans_a && !trans_b) {
    const float* ai = row(a, i, k);
    for (int64_t p = 0; p < k; ++p) acc += ai[p] * b[p * m + j];
  } else if (!trans_a && trans_b) {
    const float* ai = row(a, i, k);
    const float* bj = row(b, j, k);
    for (int64_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
  } else if (trans_a && !trans_b) {
    for (int64_t p = 0; p < k; ++p) acc += a[p * n + i] * b[p * m + j];
  } else {
    for (int64_t p = 0; p < k; ++p) acc += a[p * n + i] * b[j * k + p];
  }
  return acc;
}

}  // namespace

void gemm_serial(const float* a, const float* b, float* c, int64_t n, int64_t k, int64_t m,
                 bool trans_a, bool trans_b, bool accumulate) {
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < m; ++j) {
      float v = gemm_cell(a, b, i, j, k, n, m, trans_a, trans_b);
      if (accumulate)
        c[i * m + j] += v;
      else
        c[i * m + j] = v;
    }
}

void gemm_omp(const float* a, const float* b, float* c, int64_t n, int64_t k, int64_t m,
              bool trans_a, bool trans_b, bool accumulate) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < m; ++j) {
      float v = gemm_cell(a, b, i, j, k, n, m, trans_a, trans_b);
      if (accumulate)
        c[i * m + j] += v;
      else
        c[i * m + j] = v;
    }
}

void gemm(const float* a, const float* b, float* c, int64_t n, int64_t k, int64_t m,
          bool trans_a, bool trans_b, bool accumulate) {
  if (parallel::mode() == parallel::Mode::OpenMP)
    gemm_omp(a, b, c, n, k, m, trans_a, trans_b, accumulate);
  else
    gemm_serial(a, b, c, n, k, m, trans_a, trans_b, accumulate);
}

namespace {

inline float conv_cell(const float* x, const float* w, int64_t bi, int64_t co, int64_t t,
                       int64_t cin, int64_t l, int64_t k, int64_t stride, int64_t pad) {
  float acc = 0.0f;
  const int64_t start = t * stride - pad;
  for (int64_t ci = 0; ci < cin; ++ci) {
    const float* xr = x + (bi * cin + ci) * l;
    const float* wr = w + (co * cin + ci) * k;
    const int64_t p0 = std::max<int64_t>(0, -start);
    const int64_t p1 = std::min<int64_t>(k, l - start);
    for (int64_t p = p0; p < p1; ++p) acc += xr[start + p] * wr[p];
  }
  return acc;
}

}  // namespace

void conv1d_forward_serial(const float* x, const float* w, const float* bias, float* y,
                           int64_t b, int64_t cin, int64_t l, int64_t cout, int64_t k,
                           int64_t stride, int64_t pad) {
  const int64_t lo = conv1d_out_len(l, k, stride, pad);
  for (int64_t bi = 0; bi < b; ++bi)
    for (int64_t co = 0; co < cout; ++co)
      for (int64_t t = 0; t < lo; ++t)
        y[(bi * cout + co) * lo + t] =
            conv_cell(x, w, bi, co, t, cin, l, k, stride, pad) + (bias ? bias[co] : 0.0f);
}

void conv1d_forward_omp(const float* x, const float* w, const float* bias, float* y,
                        int64_t b, int64_t cin, int64_t l, int64_t cout, int64_t k,
                        int64_t stride, int64_t pad) {
  const int64_t lo = conv1d_out_len(l, k, stride, pad);
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t bi = 0; bi < b; ++bi)
    for (int64_t co = 0; co < cout; ++co)
      for (int64_t t = 0; t < lo; ++t)
        y[(bi * cout + co) * lo + t] =
            conv_cell(x, w, bi, co, t, cin, l, k, stride, pad) + (bias ? bias[co] : 0.0f);
}

void conv1d_forward(const float* x, const float* w, const float* bias, float* y,
                    int64_t b, int64_t cin, int64_t l, int64_t cout, int64_t k,
                    int64_t stride, int64_t pad) {
  if (parallel::mode() == parallel::Mode::OpenMP)
    conv1d_forward_omp(x, w, bias, y, b, cin, l, cout, k, stride, pad);
  else
    conv1d_forward_serial(x, w, bias, y, b, cin, l, cout, k, stride, pad);
}

namespace {

// dX gather form: dx[bi,ci,s] = sum over (co, p) with s = t*stride - pad + p.
inline float dinput_cell(const float* dy, const float* w, int64_t bi, int64_t ci, int64_t s,
                         int64_t cout, int64_t lo, int64_t cin, int64_t k, int64_t stride,
                         int64_t pad) {
  float acc = 0.0f;
  if (stride == 1) {
    // p valid iff 0 <= s + pad - p < lo
    const int64_t p0 = std::max<int64_t>(0, s + pad - (lo - 1));
    const int64_t p1 = std::min<int64_t>(k, s + pad + 1);
    const int64_t base = s + pad;
    for (int64_t co = 0; co < cout; ++co) {
      const float* dyr = dy + (bi * cout + co) * lo + base;
      const float* wr = w + (co * cin + ci) * k;
      for (int64_t p = p0; p < p1; ++p) acc += dyr[-p] * wr[p];
    }
    return acc;
  }
  for (int64_t co = 0; co < cout; ++co) {
    const float* dyr = dy + (bi * cout + co) * lo;
    const float* wr = w + (co * cin + ci) * k;
    for (int64_t p = 0; p < k; ++p) {
      const int64_t num = s + pad - p;
      if (num < 0) break;  // p only grows from here
      if (num % stride != 0) continue;
      const int64_t t = num / stride;
      if (t < lo) acc += dyr[t] * wr[p];
    }
  }
  return acc;
}

}  // namespace

void conv1d_backward_input_serial(const float* dy, const float* w, float* dx,
                                  int64_t b, int64_t cin, int64_t l, int64_t cout, int64_t k,
                                  int64_t stride, int64_t pad) {
  const int64_t lo = conv1d_out_len(l, k, stride, pad);
  for (int64_t bi = 0; bi < b; ++bi)
    for (int64_t ci = 0; ci < cin; ++ci)
      for (int64_t s = 0; s < l; ++s)
        dx[(bi * cin + ci) * l + s] += dinput_cell(dy, w, bi, ci, s, cout, lo, cin, k, stride, pad);
}

void conv1d_backward_input_omp(const float* dy, const float* w, float* dx,
                               int64_t b, int64_t cin, int64_t l, int64_t cout, int64_t k,
                               int64_t stride, int64_t pad) {
  const int64_t lo = conv1d_out_len(l, k, stride, pad);
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t bi = 0; bi < b; ++bi)
    for (int64_t ci = 0; ci < cin; ++ci)
      for (int64_t s = 0; s < l; ++s)
        dx[(bi * cin + ci) * l + s] += dinput_cell(dy, w, bi, ci, s, cout, lo, cin, k, stride, pad);
}

void conv1d_backward_input(const float* dy, const float* w, float* dx,
                           int64_t b, int64_t cin, int64_t l, int64_t cout, int64_t k,
                           int64_t stride, int64_t pad) {
  if (parallel::mode() == parallel::Mode::OpenMP)
    conv1d_backward_input_omp(dy, w, dx, b, cin, l, cout, k, stride, pad);
  else
    conv1d_backward_input_serial(dy, w, dx, b, cin, l, cout, k, stride, pad);
}

namespace {

inline float dweight_cell(const float* x, const float* dy, int64_t co, int64_t ci, int64_t p,
                          int64_t b, int64_t cin, int64_t l, int64_t cout, int64_t lo,
                          int64_t stride, int64_t pad) {
  // valid t range: 0 <= t*stride - pad + p < l
  const int64_t off = p - pad;
  int64_t t0 = 0;
  if (off < 0) t0 = (-off + stride - 1) / stride;
  int64_t t1 = lo;
  if (off < l) {
    const int64_t tmax = (l - 1 - off) / stride + 1;
    t1 = std::min(t1, tmax);
  } else {
    t1 = 0;
  }
  float acc = 0.0f;
  for (int64_t bi = 0; bi < b; ++bi) {
    const float* xr = x + (bi * cin + ci) * l + off;
    const float* dyr = dy + (bi * cout + co) * lo;
    if (stride == 1) {
      for (int64_t t = t0; t < t1; ++t) acc += xr[t] * dyr[t];
    } else {
      for (int64_t t = t0; t < t1; ++t) acc += xr[t * stride] * dyr[t];
    }
  }
  return acc;
}

}  // namespace

void conv1d_backward_weight_serial(const float* x, const float* dy, float* dw, float* db,
                                   int64_t b, int64_t cin, int64_t l, int64_t cout, int64_t k,
                                   int64_t stride, int64_t pad) {
  const int64_t lo = conv1d_out_len(l, k, stride, pad);
  for (int64_t co = 0; co < cout; ++co) {
    for (int64_t ci = 0; ci < cin; ++ci)
      for (int64_t p = 0; p < k; ++p)
        dw[(co * cin + ci) * k + p] +=
            dweight_cell(x, dy, co, ci, p, b, cin, l, cout, lo, stride, pad);
    if (db) {
      float acc = 0.0f;
      for (int64_t bi = 0; bi < b; ++bi) {
        const float* dyr = dy + (bi * cout + co) * lo;
        for (int64_t t = 0; t < lo; ++t) acc += dyr[t];
      }
      db[co] += acc;
    }
  }
}

void conv1d_backward_weight_omp(const float* x, const float* dy, float* dw, float* db,
                                int64_t b, int64_t cin, int64_t l, int64_t cout, int64_t k,
                                int64_t stride, int64_t pad) {
  const int64_t lo = conv1d_out_len(l, k, stride, pad);
#pragma omp parallel for schedule(static)
  for (int64_t co = 0; co < cout; ++co) {
    for (int64_t ci = 0; ci < cin; ++ci)
      for (int64_t p = 0; p < k; ++p)
        dw[(co * cin + ci) * k + p] +=
            dweight_cell(x, dy, co, ci, p, b, cin, l, cout, lo, stride, pad);
    if (db) {
      float acc = 0.0f;
      for (int64_t bi = 0; bi < b; ++bi) {
        const float* dyr = dy + (bi * cout + co) * lo;
        for (int64_t t = 0; t < lo; ++t) acc += dyr[t];
      }
      db[co] += acc;
    }
  }
}

void conv1d_backward_weight(const float* x, const float* dy, float* dw, float* db,
                            int64_t b, int64_t cin, int64_t l, int64_t cout, int64_t k,
                            int64_t stride, int64_t pad) {
  if (parallel::mode() == parallel::Mode::OpenMP)
    conv1d_backward_weight_omp(x, dy, dw, db, b, cin, l, cout, k, stride, pad);
  else
    conv1d_backward_weight_serial(x, dy, dw, db, b, cin, l, cout, k, stride, pad);
}

}  // namespace sleepssl::kern
