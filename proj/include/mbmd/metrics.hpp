#pragma once

#include <cstdint>
#include <vector>

#include "mbmd/common.hpp"

namespace mbmd {

struct MetricsReport {
  std::vector<std::vector<int64_t>> confusion;  // confusion[true][pred]
  double acc = 0;
  double bca = 0;
  double weighted_f1 = 0;
};

/// ACC = trace/total; BCA = mean per-class recall over classes with support;
/// weighted F1 = support-weighted per-class F1.
MetricsReport metrics_from_confusion(const std::vector<std::vector<int64_t>>& confusion);

MetricsReport compute_metrics(const std::vector<int>& y_true, const std::vector<int>& y_pred,
                              int num_classes);

}  // namespace mbmd
