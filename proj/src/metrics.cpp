#include "mbmd/metrics.hpp"

namespace mbmd {

MetricsReport metrics_from_confusion(const std::vector<std::vector<int64_t>>& confusion) {
  const size_t k = confusion.size();
  require(k >= 1, ErrorKind::Data, "empty confusion matrix");
  for (const auto& row : confusion)
    require(row.size() == k, ErrorKind::Data, "confusion matrix must be square");

  MetricsReport r;
  r.confusion = confusion;

  int64_t total = 0, correct = 0;
  std::vector<int64_t> support(k, 0), predicted(k, 0);
  for (size_t i = 0; i < k; ++i) {
    for (size_t j = 0; j < k; ++j) {
      total += confusion[i][j];
      support[i] += confusion[i][j];
      predicted[j] += confusion[i][j];
    }
    correct += confusion[i][i];
  }
  require(total > 0, ErrorKind::Data, "confusion matrix has no samples");
  r.acc = static_cast<double>(correct) / static_cast<double>(total);

  double recall_sum = 0;
  int supported = 0;
  double wf1 = 0;
  for (size_t i = 0; i < k; ++i) {
    if (support[i] == 0) continue;  // zero-support classes excluded
    const double tp = static_cast<double>(confusion[i][i]);
    const double recall = tp / static_cast<double>(support[i]);
    const double precision = predicted[i] > 0 ? tp / static_cast<double>(predicted[i]) : 0.0;
    const double f1 = (precision + recall > 0) ? 2.0 * precision * recall / (precision + recall) : 0.0;
    recall_sum += recall;
    ++supported;
    wf1 += static_cast<double>(support[i]) / static_cast<double>(total) * f1;
  }
  require(supported > 0, ErrorKind::Data, "no class has support");
  r.bca = recall_sum / static_cast<double>(supported);
  r.weighted_f1 = wf1;
  return r;
}

MetricsReport compute_metrics(const std::vector<int>& y_true, const std::vector<int>& y_pred,
                              int num_classes) {
  require(y_true.size() == y_pred.size(), ErrorKind::Data, "label/prediction count mismatch");
  require(num_classes >= 2, ErrorKind::Data, "need at least 2 classes");
  std::vector<std::vector<int64_t>> conf(static_cast<size_t>(num_classes),
                                         std::vector<int64_t>(static_cast<size_t>(num_classes), 0));
  for (size_t i = 0; i < y_true.size(); ++i) {
    require(y_true[i] >= 0 && y_true[i] < num_classes, ErrorKind::Data, "label out of range");
    require(y_pred[i] >= 0 && y_pred[i] < num_classes, ErrorKind::Data, "prediction out of range");
    ++conf[static_cast<size_t>(y_true[i])][static_cast<size_t>(y_pred[i])];
  }
  return metrics_from_confusion(conf);
}

}  // namespace mbmd
