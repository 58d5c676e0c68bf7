#pragma once

// Conversion of 3D detection boxes into voxel occupancy.
//
// Boxes are filtered by per-class score thresholds, filled with a centered
// point lattice, voxelized, and merged so that each voxel keeps the label of
// its highest-scoring box. The result becomes a probability grid that can be
// averaged with occupancy model outputs.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "occkit/grid.hpp"

namespace occkit {

/// Upright box rotated by yaw about +z. size = (length, width, height) with
/// length along the heading axis at yaw 0.
struct DetectionBox {
  Vec3 center{0.0, 0.0, 0.0};
  Vec3 size{1.0, 1.0, 1.0};
  double yaw = 0.0;
  std::uint32_t class_id = 0;
  double score = 1.0;

  friend bool operator==(const DetectionBox&, const DetectionBox&) = default;
};

/// Throws ValidationError if the box violates its invariants for a grid with
/// `num_classes` classes.
inline void validate_box(const DetectionBox& box, std::uint32_t num_classes) {
  for (double c : box.center) {
    if (!std::isfinite(c)) throw ValidationError("box center must be finite");
  }
  for (double s : box.size) {
    if (!(s > 0.0) || !std::isfinite(s)) {
      throw ValidationError("box size components must be positive");
    }
  }
  if (!std::isfinite(box.yaw)) throw ValidationError("box yaw must be finite");
  if (!(box.score >= 0.0 && box.score <= 1.0)) {
    throw ValidationError("box score " + std::to_string(box.score) +
                          " outside [0, 1]");
  }
  if (box.class_id + 1 >= num_classes) {
    throw ValidationError("box class_id " + std::to_string(box.class_id) +
                          " is not a semantic class");
  }
}

struct ConversionConfig {
  /// Minimum score per semantic class (length num_classes - 1).
  std::vector<double> thresholds;
  /// Lattice spacing inside each box, meters.
  double spacing_t = 0.2;

  static ConversionConfig uniform(std::uint32_t num_classes,
                                  double threshold = 0.3,
                                  double spacing_t = 0.2) {
    ConversionConfig cfg{std::vector<double>(num_classes - 1, threshold), spacing_t};
    cfg.validate(num_classes);
    return cfg;
  }

  void validate(std::uint32_t num_classes) const {
    if (thresholds.size() + 1 != num_classes) {
      throw ValidationError("expected " + std::to_string(num_classes - 1) +
                            " thresholds, got " +
                            std::to_string(thresholds.size()));
    }
    for (double t : thresholds) {
      if (!(t >= 0.0 && t <= 1.0)) {
        throw ValidationError("thresholds must lie in [0, 1]");
      }
    }
    if (!(spacing_t > 0.0) || !std::isfinite(spacing_t)) {
      throw ValidationError("spacing_t must be positive");
    }
  }
};

/// Boxes whose score reaches their class threshold (inclusive), in order.
inline std::vector<DetectionBox> filter_boxes(const std::vector<DetectionBox>& boxes,
                                              const ConversionConfig& cfg) {
  std::vector<DetectionBox> kept;
  for (const auto& b : boxes) {
    if (b.class_id < cfg.thresholds.size() && b.score >= cfg.thresholds[b.class_id]) {
      kept.push_back(b);
    }
  }
  return kept;
}

/// Points per axis of the lattice: max(1, floor(extent / spacing)).
inline std::size_t lattice_count(double extent, double spacing) {
  const double n = std::floor(extent / spacing);
  return n < 1.0 ? 1 : static_cast<std::size_t>(n);
}

/// World-frame lattice filling the box. Along each local axis the k-th of n
/// points sits at ((k + 0.5) / n - 0.5) * size, so every point is interior.
inline std::vector<Vec3> box_to_points(const DetectionBox& box, double spacing_t) {
  if (!(spacing_t > 0.0)) throw ValidationError("spacing_t must be positive");
  std::array<std::size_t, 3> n{};
  std::array<std::vector<double>, 3> local;
  for (int a = 0; a < 3; ++a) {
    n[a] = lattice_count(box.size[a], spacing_t);
    local[a].resize(n[a]);
    for (std::size_t k = 0; k < n[a]; ++k) {
      local[a][k] = (static_cast<double>(k) + 0.5) / static_cast<double>(n[a]) *
                        box.size[a] -
                    box.size[a] / 2.0;
    }
  }
  const double c = std::cos(box.yaw);
  const double s = std::sin(box.yaw);
  std::vector<Vec3> points;
  points.reserve(n[0] * n[1] * n[2]);
  for (double lx : local[0]) {
    for (double ly : local[1]) {
      const double wx = box.center[0] + c * lx - s * ly;
      const double wy = box.center[1] + s * lx + c * ly;
      for (double lz : local[2]) points.push_back({wx, wy, box.center[2] + lz});
    }
  }
  return points;
}

/// Closed containment test in the box frame.
inline bool point_in_box(const Vec3& p, const DetectionBox& box) {
  const double dx = p[0] - box.center[0];
  const double dy = p[1] - box.center[1];
  const double c = std::cos(box.yaw);
  const double s = std::sin(box.yaw);
  // Rotation by -yaw.
  const double lx = c * dx + s * dy;
  const double ly = -s * dx + c * dy;
  const double lz = p[2] - box.center[2];
  return std::abs(lx) <= box.size[0] / 2.0 && std::abs(ly) <= box.size[1] / 2.0 &&
         std::abs(lz) <= box.size[2] / 2.0;
}

/// Per-voxel confidence of the winning box (0 where no box landed).
class ScoreGrid {
 public:
  ScoreGrid(GridSpec spec, std::vector<double> scores)
      : spec_(spec), scores_(std::move(scores)) {
    if (scores_.size() != spec_.num_voxels()) {
      throw ShapeError("score grid length mismatch");
    }
  }

  const GridSpec& spec() const noexcept { return spec_; }
  std::span<const double> scores() const noexcept { return scores_; }
  double operator[](std::size_t v) const noexcept { return scores_[v]; }

  friend bool operator==(const ScoreGrid&, const ScoreGrid&) = default;

 private:
  GridSpec spec_;
  std::vector<double> scores_;
};

struct BoxOccupancy {
  LabelGrid labels;
  ScoreGrid scores;
};

/// Rasterizes the boxes that pass `cfg`. A voxel hit by several boxes keeps
/// the highest score, then the lowest class id, then the earliest box.
/// Points failing point_in_box are dropped, which matters only for
/// degenerate floating-point cases.
inline BoxOccupancy voxelize_boxes(const std::vector<DetectionBox>& boxes,
                                   const GridSpec& spec,
                                   const ConversionConfig& cfg) {
  cfg.validate(spec.num_classes);
  for (const auto& box : boxes) validate_box(box, spec.num_classes);
  const std::vector<DetectionBox> kept = filter_boxes(boxes, cfg);

  const std::size_t nv = spec.num_voxels();
  std::vector<Label> labels(nv, static_cast<Label>(spec.free_label()));
  std::vector<double> scores(nv, 0.0);
  std::vector<std::uint8_t> marked(nv, 0);

  for (const auto& box : kept) {
    for (const Vec3& p : box_to_points(box, cfg.spacing_t)) {
      if (!point_in_box(p, box)) continue;
      const auto cell = world_to_voxel(spec, p);
      if (!cell) continue;
      const std::size_t v = voxel_index(spec, *cell);
      // Strict comparisons keep the earliest box on full ties.
      const bool wins = !marked[v] || box.score > scores[v] ||
                        (box.score == scores[v] && box.class_id < labels[v]);
      if (wins) {
        marked[v] = 1;
        scores[v] = box.score;
        labels[v] = static_cast<Label>(box.class_id);
      }
    }
  }
  return {LabelGrid(spec, std::move(labels)), ScoreGrid(spec, std::move(scores))};
}

/// Semantic voxel with score s -> p(class) = s, p(free) = 1 - s; free voxels
/// are one-hot on free.
inline ProbGrid det_to_probgrid(const LabelGrid& labels, const ScoreGrid& scores) {
  require_same_spec(labels.spec(), scores.spec());
  const GridSpec& spec = labels.spec();
  const std::size_t k = spec.num_classes;
  const std::size_t free = spec.free_label();
  std::vector<double> p(spec.num_voxels() * k, 0.0);
  for (std::size_t v = 0; v < spec.num_voxels(); ++v) {
    double* d = p.data() + v * k;
    if (labels[v] == free) {
      d[free] = 1.0;
    } else {
      const double s = scores[v];
      if (!(s >= 0.0 && s <= 1.0)) {
        throw ValidationError("voxel " + std::to_string(v) + " score outside [0, 1]");
      }
      d[labels[v]] = s;
      d[free] = 1.0 - s;
    }
  }
  return ProbGrid(spec, std::move(p));
}

/// voxelize_boxes followed by det_to_probgrid.
inline ProbGrid boxes_to_probgrid(const std::vector<DetectionBox>& boxes,
                                  const GridSpec& spec, const ConversionConfig& cfg) {
  const BoxOccupancy occ = voxelize_boxes(boxes, spec, cfg);
  return det_to_probgrid(occ.labels, occ.scores);
}

}  // namespace occkit
