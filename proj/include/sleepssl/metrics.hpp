#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "sleepssl/dataio.hpp"
#include "sleepssl/models.hpp"

namespace sleepssl::harness {

struct MetricsBundle {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::array<double, data::kNumStages> per_class_f1{};
  std::array<std::array<int64_t, data::kNumStages>, data::kNumStages> confusion{};  // [true][pred]
  int64_t n_eval = 0;
};

// Confusion-matrix metrics from prediction/label vectors. Per-class F1 is
// 2PR/(P+R), 0 when P+R or TP is 0 with support present; zero-support classes
// are excluded from the macro mean.
MetricsBundle metrics_from_predictions(const std::vector<int>& truth,
                                       const std::vector<int>& pred);

// Argmax-of-logits evaluation in eval mode (dropout off, batchnorm running
// stats). Throws on an empty test set.
MetricsBundle evaluate(models::Model& model, const Tensor& x,
                       const std::vector<data::Stage>& labels);

std::vector<int> predict(models::Model& model, const Tensor& x);

}  // namespace sleepssl::harness
