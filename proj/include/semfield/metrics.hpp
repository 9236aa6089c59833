#pragma once

#include <cstdint>
#include <json.hpp>
#include <vector>

#include "semfield/data.hpp"

namespace semfield {

/// Pixel-count confusion matrix; rows are ground truth, columns predictions.
/// Pixels whose ground truth is void are skipped at accumulation.
struct ConfusionMatrix {
  Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic> counts;

  explicit ConfusionMatrix(int num_classes)
      : counts(Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>::Zero(
            num_classes, num_classes)) {}

  int num_classes() const { return static_cast<int>(counts.rows()); }
  std::int64_t total() const { return counts.sum(); }

  void accumulate(const SemanticImage& pred, const SemanticImage& gt);

  ConfusionMatrix& operator+=(const ConfusionMatrix& other) {
    if (other.counts.rows() != counts.rows())
      throw InvalidInput("confusion matrix size mismatch");
    counts += other.counts;
    return *this;
  }
};

struct ClassScore {
  int class_id = 0;
  double iou = 0, recall = 0;
  std::int64_t support = 0;        // ground-truth pixel count
  bool has_iou = false, has_recall = false;
};

struct Scores {
  double miou = 0, total_acc = 0, avg_acc = 0;
  std::vector<ClassScore> per_class;
};

/// Per-class IoU = diag / (row + col - diag) and recall = diag / row; classes
/// absent from both ground truth and predictions are excluded from mIoU, and
/// classes absent from ground truth are excluded from average accuracy.
Scores scores(const ConfusionMatrix& cm);

nlohmann::json scores_to_json(const Scores& s);

}  // namespace semfield
