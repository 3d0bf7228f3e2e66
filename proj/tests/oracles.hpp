// Independent brute-force oracles used by the unit and acceptance suites.
// Everything here is written directly from the defining formulas, in double
// precision, with no calls into the library's compute paths.
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "sleepssl/tensor.hpp"

namespace oracle {

using dmat = std::vector<std::vector<double>>;

inline dmat to_dmat(const sleepssl::Tensor& t) {
  dmat m(static_cast<size_t>(t.dim(0)), std::vector<double>(static_cast<size_t>(t.dim(1))));
  for (int64_t i = 0; i < t.dim(0); ++i)
    for (int64_t j = 0; j < t.dim(1); ++j) m[static_cast<size_t>(i)][static_cast<size_t>(j)] = t.at2(i, j);
  return m;
}

inline void normalize_rows(dmat& m) {
  for (auto& row : m) {
    double n = 0.0;
    for (double v : row) n += v * v;
    n = std::sqrt(n);
    for (double& v : row) v /= n;
  }
}

// Direct double-summation NT-Xent: for every anchor i in the 2N stack,
// positive is its paired view, denominator runs over all a != i. No max
// subtraction, no reuse of library code.
inline double nt_xent_bruteforce(const dmat& za, const dmat& zb, double tau) {
  const size_t n = za.size();
  const size_t m = 2 * n;
  dmat z(m);
  for (size_t i = 0; i < n; ++i) {
    z[i] = za[i];
    z[i + n] = zb[i];
  }
  double total = 0.0;
  for (size_t i = 0; i < m; ++i) {
    const size_t pos = (i + n) % m;
    auto dot = [&](size_t a, size_t b) {
      double d = 0.0;
      for (size_t k = 0; k < z[a].size(); ++k) d += z[a][k] * z[b][k];
      return d;
    };
    double denom = 0.0;
    for (size_t a = 0; a < m; ++a)
      if (a != i) denom += std::exp(dot(i, a) / tau);
    total += -std::log(std::exp(dot(i, pos) / tau) / denom);
  }
  return total / static_cast<double>(m);
}

// Two-candidate (batch) InfoNCE with positives on the diagonal.
inline double info_nce_bruteforce(const dmat& pred, const dmat& tgt) {
  const size_t b = pred.size();
  double total = 0.0;
  for (size_t i = 0; i < b; ++i) {
    auto dot = [&](size_t p, size_t t) {
      double d = 0.0;
      for (size_t k = 0; k < pred[p].size(); ++k) d += pred[p][k] * tgt[t][k];
      return d;
    };
    double denom = 0.0;
    for (size_t j = 0; j < b; ++j) denom += std::exp(dot(i, j));
    total += -std::log(std::exp(dot(i, i)) / denom);
  }
  return total / static_cast<double>(b);
}

// Confusion-count metrics straight from the definitions. Classes with zero
// support are excluded from the macro mean; P+R == 0 with support gives F1 0.
struct MetricsOracle {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::array<double, 5> per_class_f1{};
  std::array<std::array<int64_t, 5>, 5> confusion{};
};

inline MetricsOracle metrics_bruteforce(const std::vector<int>& truth,
                                        const std::vector<int>& pred) {
  MetricsOracle m;
  const size_t n = truth.size();
  for (size_t i = 0; i < n; ++i)
    m.confusion[static_cast<size_t>(truth[i])][static_cast<size_t>(pred[i])]++;
  int64_t correct = 0;
  for (int c = 0; c < 5; ++c) correct += m.confusion[static_cast<size_t>(c)][static_cast<size_t>(c)];
  m.accuracy = static_cast<double>(correct) / static_cast<double>(n);
  double f1_sum = 0.0;
  int present = 0;
  for (int c = 0; c < 5; ++c) {
    int64_t tp = m.confusion[static_cast<size_t>(c)][static_cast<size_t>(c)];
    int64_t support = 0, predicted = 0;
    for (int k = 0; k < 5; ++k) {
      support += m.confusion[static_cast<size_t>(c)][static_cast<size_t>(k)];
      predicted += m.confusion[static_cast<size_t>(k)][static_cast<size_t>(c)];
    }
    if (support == 0) {
      m.per_class_f1[static_cast<size_t>(c)] = 0.0;
      continue;
    }
    ++present;
    double f1 = 0.0;
    if (predicted + support > 0 && tp > 0) {
      const double p = static_cast<double>(tp) / static_cast<double>(predicted);
      const double r = static_cast<double>(tp) / static_cast<double>(support);
      if (p + r > 0) f1 = 2.0 * p * r / (p + r);
    }
    m.per_class_f1[static_cast<size_t>(c)] = f1;
    f1_sum += f1;
  }
  m.macro_f1 = present > 0 ? f1_sum / present : 0.0;
  return m;
}

// Per-class label-budget rounding rule from the stratified-sampling contract.
inline std::vector<int64_t> stratified_counts(const std::vector<int64_t>& class_counts,
                                              double fraction) {
  std::vector<int64_t> out;
  for (int64_t n : class_counts) {
    if (n == 0) {
      out.push_back(0);
      continue;
    }
    int64_t take = std::llround(fraction * static_cast<double>(n));
    if (take < 1) take = 1;
    if (take > n) take = n;
    out.push_back(take);
  }
  return out;
}

}  // namespace oracle
