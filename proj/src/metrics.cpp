#include "semfield/metrics.hpp"

namespace semfield {

void ConfusionMatrix::accumulate(const SemanticImage& pred, const SemanticImage& gt) {
  if (pred.width != gt.width || pred.height != gt.height)
    throw InvalidInput("confusion accumulate: image dimensions differ (" +
                       std::to_string(pred.width) + "x" + std::to_string(pred.height) +
                       " vs " + std::to_string(gt.width) + "x" + std::to_string(gt.height) +
                       ")");
  const int c = num_classes();
  for (std::size_t i = 0; i < gt.labels.size(); ++i) {
    const int g = gt.labels[i];
    if (g == kVoidLabel) continue;
    const int p = pred.labels[i];
    if (g >= c) throw InvalidInput("ground-truth label " + std::to_string(g) + " >= C");
    if (p >= c)
      throw InvalidInput("predicted label " + std::to_string(p) +
                         " >= C on a supervised pixel");
    ++counts(g, p);
  }
}

Scores scores(const ConfusionMatrix& cm) {
  const std::int64_t total = cm.total();
  if (total <= 0) throw UndefinedMetric("confusion matrix is empty");
  const int c = cm.num_classes();

  Scores s;
  s.per_class.resize(c);
  double iou_sum = 0, recall_sum = 0;
  int iou_n = 0, recall_n = 0;
  std::int64_t trace = 0;
  for (int k = 0; k < c; ++k) {
    const std::int64_t row = cm.counts.row(k).sum();
    const std::int64_t col = cm.counts.col(k).sum();
    const std::int64_t diag = cm.counts(k, k);
    trace += diag;
    ClassScore& cs = s.per_class[k];
    cs.class_id = k;
    cs.support = row;
    if (row + col > 0) {
      cs.iou = static_cast<double>(diag) / static_cast<double>(row + col - diag);
      cs.has_iou = true;
      iou_sum += cs.iou;
      ++iou_n;
    }
    if (row > 0) {
      cs.recall = static_cast<double>(diag) / static_cast<double>(row);
      cs.has_recall = true;
      recall_sum += cs.recall;
      ++recall_n;
    }
  }
  s.miou = iou_n > 0 ? iou_sum / iou_n : 0.0;
  s.avg_acc = recall_n > 0 ? recall_sum / recall_n : 0.0;
  s.total_acc = static_cast<double>(trace) / static_cast<double>(total);
  return s;
}

nlohmann::json scores_to_json(const Scores& s) {
  nlohmann::json per_class = nlohmann::json::array();
  for (const auto& cs : s.per_class) {
    nlohmann::json entry{{"class", cs.class_id}, {"support", cs.support}};
    entry["iou"] = cs.has_iou ? nlohmann::json(cs.iou) : nlohmann::json(nullptr);
    entry["recall"] = cs.has_recall ? nlohmann::json(cs.recall) : nlohmann::json(nullptr);
    per_class.push_back(std::move(entry));
  }
  return nlohmann::json{{"miou", s.miou},
                        {"total_acc", s.total_acc},
                        {"avg_acc", s.avg_acc},
                        {"per_class", per_class}};
}

}  // namespace semfield
