#include "sleepssl/metrics.hpp"

#include <algorithm>
#include <stdexcept>

namespace sleepssl::harness {

MetricsBundle metrics_from_predictions(const std::vector<int>& truth,
                                       const std::vector<int>& pred) {
  if (truth.empty() || truth.size() != pred.size())
    throw std::invalid_argument("metrics: empty or mismatched prediction/label vectors");
  MetricsBundle m;
  m.n_eval = static_cast<int64_t>(truth.size());
  for (size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || truth[i] >= data::kNumStages || pred[i] < 0 ||
        pred[i] >= data::kNumStages)
      throw std::invalid_argument("metrics: class index out of range");
    m.confusion[static_cast<size_t>(truth[i])][static_cast<size_t>(pred[i])]++;
  }
  int64_t trace = 0;
  for (int c = 0; c < data::kNumStages; ++c)
    trace += m.confusion[static_cast<size_t>(c)][static_cast<size_t>(c)];
  m.accuracy = static_cast<double>(trace) / static_cast<double>(m.n_eval);

  double f1_sum = 0.0;
  int supported = 0;
  for (int c = 0; c < data::kNumStages; ++c) {
    int64_t support = 0, predicted = 0;
    for (int k = 0; k < data::kNumStages; ++k) {
      support += m.confusion[static_cast<size_t>(c)][static_cast<size_t>(k)];
      predicted += m.confusion[static_cast<size_t>(k)][static_cast<size_t>(c)];
    }
    const int64_t tp = m.confusion[static_cast<size_t>(c)][static_cast<size_t>(c)];
    if (support == 0) continue;  // excluded from the macro mean
    ++supported;
    double f1 = 0.0;
    if (tp > 0) {
      const double p = static_cast<double>(tp) / static_cast<double>(predicted);
      const double r = static_cast<double>(tp) / static_cast<double>(support);
      f1 = 2.0 * p * r / (p + r);
    }
    m.per_class_f1[static_cast<size_t>(c)] = f1;
    f1_sum += f1;
  }
  m.macro_f1 = supported > 0 ? f1_sum / supported : 0.0;
  return m;
}

std::vector<int> predict(models::Model& model, const Tensor& x) {
  const int64_t n = x.dim(0), len = x.dim(1);
  const int64_t chunk = 256;
  std::vector<int> out;
  out.reserve(static_cast<size_t>(n));
  nn::Fwd ctx{false, nullptr};
  for (int64_t start = 0; start < n; start += chunk) {
    const int64_t stop = std::min(n, start + chunk);
    Tensor batch({stop - start, len});
    std::copy_n(x.data() + start * len, (stop - start) * len, batch.data());
    nn::Var logits = model.logits_forward(batch, ctx);
    for (int64_t i = 0; i < stop - start; ++i) {
      int arg = 0;
      for (int c = 1; c < model.spec().n_classes; ++c)
        if (logits->value.at2(i, c) > logits->value.at2(i, arg)) arg = c;
      out.push_back(arg);
    }
  }
  return out;
}

MetricsBundle evaluate(models::Model& model, const Tensor& x,
                       const std::vector<data::Stage>& labels) {
  if (x.rank() != 2 || x.dim(0) == 0) throw std::invalid_argument("evaluate: empty test set");
  if (static_cast<int64_t>(labels.size()) != x.dim(0))
    throw std::invalid_argument("evaluate: labels length mismatch");
  std::vector<int> pred = predict(model, x);
  std::vector<int> truth(labels.size());
  for (size_t i = 0; i < labels.size(); ++i) truth[i] = static_cast<int>(labels[i]);
  return metrics_from_predictions(truth, pred);
}

}  // namespace sleepssl::harness
