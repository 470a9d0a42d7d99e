#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include "barnet/mask.hpp"

namespace barnet {

/// |pred ∩ truth| / |pred ∪ truth| for one class; nullopt when the union is empty.
std::optional<double> iou(const LabelMap& pred, const LabelMap& truth, int cls);

/// 2|pred ∩ truth| / (|pred| + |truth|); nullopt when both are empty.
std::optional<double> dice_metric(const LabelMap& pred, const LabelMap& truth, int cls);

/// K×K pixel counts, row = ground truth, column = prediction.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(Index num_classes = 0);

  void add(const LabelMap& pred, const LabelMap& truth);
  void merge(const ConfusionMatrix& other);

  Index num_classes() const { return k_; }
  std::uint64_t at(Index truth, Index pred) const { return counts_[static_cast<std::size_t>(truth * k_ + pred)]; }
  std::uint64_t total() const;
  std::uint64_t row_sum(Index truth) const;
  std::uint64_t column_sum(Index pred) const;

 private:
  Index k_;
  std::vector<std::uint64_t> counts_;
};

struct ClassMetrics {
  std::optional<double> iou;
  std::optional<double> dice;
  /// Diagonal over row sum; undefined when the class has no ground-truth pixels.
  std::optional<double> accuracy;
  std::uint64_t truth_pixels = 0;
  std::uint64_t predicted_pixels = 0;
};

struct EvalReport {
  ConfusionMatrix confusion;
  std::vector<ClassMetrics> classes;
  /// Means over classes present in the ground truth.
  double mean_iou = 0.0;
  double mean_dice = 0.0;
  std::size_t images = 0;

  static EvalReport from_confusion(const ConfusionMatrix& m, std::size_t images);
};

/// Accumulates the confusion matrix over aligned prediction/truth lists and
/// derives per-class metrics from the pooled counts.
EvalReport confusion_report(std::span<const LabelMap> preds, std::span<const LabelMap> truths, Index num_classes);

/// Sample-count-weighted mean IoU across the parts of a multi-part test set.
double weighted_mean_iou(std::span<const EvalReport> parts);

/// One row per class plus a "mean" row; undefined values are written as NA.
void write_report_csv(std::ostream& os, const EvalReport& report);
void write_confusion_csv(std::ostream& os, const ConfusionMatrix& m);
void write_confusion_normalized_csv(std::ostream& os, const ConfusionMatrix& m);

}  // namespace barnet
