#pragma once

// Masked per-class IoU / mIoU over label grids.

#include <cstdint>
#include <optional>
#include <vector>

#include "occkit/grid.hpp"

namespace occkit {

struct ClassCounts {
  std::int64_t intersection = 0;
  std::int64_t union_ = 0;

  friend bool operator==(const ClassCounts&, const ClassCounts&) = default;
};

/// Per-semantic-class IoU (free class excluded) and their mean.
struct IoUReport {
  std::vector<std::optional<double>> per_class;
  std::vector<ClassCounts> counts;
  /// Absent when no class is defined.
  std::optional<double> miou;

  friend bool operator==(const IoUReport&, const IoUReport&) = default;
};

struct EvalOptions {
  /// Score classes absent from both grids (union = 0) as 0 instead of
  /// leaving them out of the mean.
  bool strict_zero = false;
};

/// IoU of every semantic class over the voxels where the mask is set.
inline IoUReport evaluate(const LabelGrid& pred, const LabelGrid& gt,
                          const VoxelMask& mask, EvalOptions options = {}) {
  require_same_spec(pred.spec(), gt.spec());
  require_same_spec(pred.spec(), mask.spec());

  const std::size_t semantic = pred.spec().num_semantic();
  const std::size_t k = pred.spec().num_classes;
  // Confusion tallies: per class, voxels predicted c, labeled c, and both.
  std::vector<std::int64_t> pred_count(k, 0), gt_count(k, 0), hit(k, 0);
  for (std::size_t v = 0; v < pred.size(); ++v) {
    if (!mask[v]) continue;
    const Label p = pred[v];
    const Label g = gt[v];
    ++pred_count[p];
    ++gt_count[g];
    if (p == g) ++hit[p];
  }

  IoUReport report;
  report.per_class.resize(semantic);
  report.counts.resize(semantic);
  double sum = 0.0;
  std::size_t defined = 0;
  for (std::size_t c = 0; c < semantic; ++c) {
    const std::int64_t inter = hit[c];
    const std::int64_t uni = pred_count[c] + gt_count[c] - hit[c];
    report.counts[c] = {inter, uni};
    if (uni > 0) {
      report.per_class[c] = static_cast<double>(inter) / static_cast<double>(uni);
    } else if (options.strict_zero) {
      report.per_class[c] = 0.0;
    }
    if (report.per_class[c]) {
      sum += *report.per_class[c];
      ++defined;
    }
  }
  if (defined > 0) report.miou = sum / static_cast<double>(defined);
  return report;
}

/// evaluate(argmax_labels(pred), gt, mask).
inline IoUReport evaluate_prob(const ProbGrid& pred, const LabelGrid& gt,
                               const VoxelMask& mask, EvalOptions options = {}) {
  require_same_spec(pred.spec(), gt.spec());
  return evaluate(argmax_labels(pred), gt, mask, options);
}

}  // namespace occkit
