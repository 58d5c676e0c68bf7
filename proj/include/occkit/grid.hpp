#pragma once

// Voxel volume geometry and the dense grids defined over it.
//
// Every grid uses one linear layout: x-major, then y, then z, i.e.
// index = (x * ny + y) * nz + z. Probability grids append the class axis
// innermost (voxel-major, then class).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "occkit/error.hpp"

namespace occkit {

using Index3 = std::array<std::size_t, 3>;
using Vec3 = std::array<double, 3>;
using Label = std::uint8_t;

/// Largest class count representable by the u8 label payload.
inline constexpr std::uint32_t kMaxClasses = 256;

/// Geometry of an axis-aligned, isotropic voxel volume.
///
/// Cells are half-open: voxel i along an axis covers
/// [origin + i * voxel_size, origin + (i + 1) * voxel_size). The default
/// value is the challenge geometry: 200 x 200 x 16 voxels of 0.4 m spanning
/// [-40, 40] x [-40, 40] x [-1, 5.4] with 18 classes, 17 being free space.
struct GridSpec {
  std::array<std::uint32_t, 3> dims{200, 200, 16};
  double voxel_size = 0.4;
  Vec3 origin{-40.0, -40.0, -1.0};
  std::uint32_t num_classes = 18;

  static GridSpec challenge() { return GridSpec{}; }

  /// Builds and validates a spec.
  static GridSpec make(std::array<std::uint32_t, 3> dims, double voxel_size,
                       Vec3 origin, std::uint32_t num_classes) {
    GridSpec spec{dims, voxel_size, origin, num_classes};
    spec.validate();
    return spec;
  }

  std::uint32_t free_label() const noexcept { return num_classes - 1; }
  std::uint32_t num_semantic() const noexcept { return num_classes - 1; }

  std::size_t num_voxels() const noexcept {
    return std::size_t{dims[0]} * dims[1] * dims[2];
  }

  Vec3 upper_corner() const noexcept {
    return {origin[0] + dims[0] * voxel_size, origin[1] + dims[1] * voxel_size,
            origin[2] + dims[2] * voxel_size};
  }

  void validate() const {
    for (auto d : dims) {
      if (d < 1) throw ValidationError("grid dims must be >= 1");
    }
    if (!(voxel_size > 0.0) || !std::isfinite(voxel_size)) {
      throw ValidationError("voxel_size must be a positive finite value");
    }
    for (double o : origin) {
      if (!std::isfinite(o)) throw ValidationError("grid origin must be finite");
    }
    if (num_classes < 2 || num_classes > kMaxClasses) {
      throw ValidationError("num_classes must lie in [2, 256], got " +
                            std::to_string(num_classes));
    }
  }

  friend bool operator==(const GridSpec&, const GridSpec&) = default;
};

inline std::string describe(const GridSpec& s) {
  return std::to_string(s.dims[0]) + "x" + std::to_string(s.dims[1]) + "x" +
         std::to_string(s.dims[2]) + " @" + std::to_string(s.voxel_size) +
         "m, " + std::to_string(s.num_classes) + " classes";
}

/// Throws ShapeError unless both specs are identical.
inline void require_same_spec(const GridSpec& a, const GridSpec& b) {
  if (!(a == b)) {
    throw ShapeError("spec mismatch: " + describe(a) + " vs " + describe(b));
  }
}

/// Linear index of voxel (x, y, z).
inline std::size_t voxel_index(const GridSpec& spec, const Index3& c) {
  if (c[0] >= spec.dims[0] || c[1] >= spec.dims[1] || c[2] >= spec.dims[2]) {
    throw IndexError("voxel (" + std::to_string(c[0]) + ", " +
                     std::to_string(c[1]) + ", " + std::to_string(c[2]) +
                     ") outside volume " + describe(spec));
  }
  return (c[0] * spec.dims[1] + c[1]) * spec.dims[2] + c[2];
}

/// Inverse of voxel_index.
inline Index3 voxel_coords(const GridSpec& spec, std::size_t index) {
  if (index >= spec.num_voxels()) {
    throw IndexError("linear index " + std::to_string(index) +
                     " outside volume " + describe(spec));
  }
  const std::size_t nz = spec.dims[2];
  const std::size_t ny = spec.dims[1];
  return {index / (ny * nz), (index / nz) % ny, index % nz};
}

inline Vec3 voxel_center(const GridSpec& spec, const Index3& c) {
  return {spec.origin[0] + (static_cast<double>(c[0]) + 0.5) * spec.voxel_size,
          spec.origin[1] + (static_cast<double>(c[1]) + 0.5) * spec.voxel_size,
          spec.origin[2] + (static_cast<double>(c[2]) + 0.5) * spec.voxel_size};
}

/// Voxel containing a world point, or nullopt outside the volume.
inline std::optional<Index3> world_to_voxel(const GridSpec& spec,
                                            const Vec3& p) {
  Index3 out{};
  for (int a = 0; a < 3; ++a) {
    const double f = std::floor((p[a] - spec.origin[a]) / spec.voxel_size);
    // Also rejects NaN.
    if (!(f >= 0.0 && f < static_cast<double>(spec.dims[a]))) {
      return std::nullopt;
    }
    out[a] = static_cast<std::size_t>(f);
  }
  return out;
}

/// Dense per-voxel semantic labels.
class LabelGrid {
 public:
  LabelGrid(GridSpec spec, std::vector<Label> labels)
      : spec_(spec), labels_(std::move(labels)) {
    spec_.validate();
    if (labels_.size() != spec_.num_voxels()) {
      throw ShapeError("label count " + std::to_string(labels_.size()) +
                       " != voxel count " +
                       std::to_string(spec_.num_voxels()));
    }
    for (std::size_t v = 0; v < labels_.size(); ++v) {
      if (labels_[v] >= spec_.num_classes) {
        throw ValidationError("voxel " + std::to_string(v) + " has label " +
                              std::to_string(labels_[v]) + " >= num_classes " +
                              std::to_string(spec_.num_classes));
      }
    }
  }

  static LabelGrid filled(const GridSpec& spec, Label label) {
    return LabelGrid(spec, std::vector<Label>(spec.num_voxels(), label));
  }

  const GridSpec& spec() const noexcept { return spec_; }
  std::span<const Label> labels() const noexcept { return labels_; }
  std::size_t size() const noexcept { return labels_.size(); }
  Label operator[](std::size_t v) const noexcept { return labels_[v]; }
  Label at(const Index3& c) const { return labels_[voxel_index(spec_, c)]; }

  friend bool operator==(const LabelGrid&, const LabelGrid&) = default;

 private:
  GridSpec spec_;
  std::vector<Label> labels_;
};

/// Per-voxel visibility; true voxels participate in evaluation.
class VoxelMask {
 public:
  VoxelMask(GridSpec spec, std::vector<std::uint8_t> bits)
      : spec_(spec), bits_(std::move(bits)) {
    spec_.validate();
    if (bits_.size() != spec_.num_voxels()) {
      throw ShapeError("mask length " + std::to_string(bits_.size()) +
                       " != voxel count " +
                       std::to_string(spec_.num_voxels()));
    }
    for (std::size_t v = 0; v < bits_.size(); ++v) {
      if (bits_[v] > 1) {
        throw ValidationError("mask voxel " + std::to_string(v) +
                              " holds " + std::to_string(bits_[v]) +
                              ", expected 0 or 1");
      }
    }
  }

  static VoxelMask full(const GridSpec& spec) {
    return VoxelMask(spec, std::vector<std::uint8_t>(spec.num_voxels(), 1));
  }

  const GridSpec& spec() const noexcept { return spec_; }
  std::span<const std::uint8_t> bits() const noexcept { return bits_; }
  std::size_t size() const noexcept { return bits_.size(); }
  bool operator[](std::size_t v) const noexcept { return bits_[v] != 0; }

  std::size_t count() const noexcept {
    return static_cast<std::size_t>(
        std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
  }

  friend bool operator==(const VoxelMask&, const VoxelMask&) = default;

 private:
  GridSpec spec_;
  std::vector<std::uint8_t> bits_;
};

/// Tolerance on per-voxel probability sums.
inline constexpr double kProbSumTolerance = 1e-6;

/// Dense per-voxel class distributions, voxel-major then class.
class ProbGrid {
 public:
  /// Validates non-negativity and per-voxel normalization within 1e-6.
  ProbGrid(GridSpec spec, std::vector<double> probs)
      : spec_(spec), probs_(std::move(probs)) {
    spec_.validate();
    check_layout();
    check_distributions();
  }

  /// Validates like the constructor, then divides every voxel whose sum is
  /// off by more than `exact_tolerance` by that sum. Voxels already
  /// normalized to working precision are left bit-identical.
  static ProbGrid renormalized(GridSpec spec, std::vector<double> probs,
                               double exact_tolerance = 1e-12) {
    ProbGrid g(spec, std::move(probs));
    const std::size_t k = g.spec_.num_classes;
    for (std::size_t v = 0; v < g.spec_.num_voxels(); ++v) {
      double* d = g.probs_.data() + v * k;
      double sum = 0.0;
      for (std::size_t c = 0; c < k; ++c) sum += d[c];
      if (std::abs(sum - 1.0) <= exact_tolerance) continue;
      for (std::size_t c = 0; c < k; ++c) d[c] /= sum;
    }
    return g;
  }

  static ProbGrid uniform(const GridSpec& spec) {
    return ProbGrid(spec, std::vector<double>(spec.num_voxels() * spec.num_classes,
                                              1.0 / spec.num_classes));
  }

  static ProbGrid one_hot(const LabelGrid& labels) {
    const GridSpec& spec = labels.spec();
    std::vector<double> p(spec.num_voxels() * spec.num_classes, 0.0);
    for (std::size_t v = 0; v < labels.size(); ++v) {
      p[v * spec.num_classes + labels[v]] = 1.0;
    }
    return ProbGrid(spec, std::move(p));
  }

  const GridSpec& spec() const noexcept { return spec_; }
  std::span<const double> probs() const noexcept { return probs_; }
  std::size_t num_voxels() const noexcept { return spec_.num_voxels(); }

  std::span<const double> distribution(std::size_t v) const noexcept {
    return std::span<const double>(probs_).subspan(v * spec_.num_classes,
                                                   spec_.num_classes);
  }

  friend bool operator==(const ProbGrid&, const ProbGrid&) = default;

 private:
  void check_layout() const {
    const std::size_t expect = spec_.num_voxels() * spec_.num_classes;
    if (probs_.size() != expect) {
      throw ShapeError("probability count " + std::to_string(probs_.size()) +
                       " != voxels x classes " + std::to_string(expect));
    }
  }

  void check_distributions() const {
    const std::size_t k = spec_.num_classes;
    for (std::size_t v = 0; v < spec_.num_voxels(); ++v) {
      const double* d = probs_.data() + v * k;
      double sum = 0.0;
      for (std::size_t c = 0; c < k; ++c) {
        if (!(d[c] >= 0.0)) {
          throw ValidationError("voxel " + std::to_string(v) + " class " +
                                std::to_string(c) +
                                " has negative or NaN probability");
        }
        sum += d[c];
      }
      if (!(std::abs(sum - 1.0) <= kProbSumTolerance)) {
        throw ValidationError("voxel " + std::to_string(v) +
                              " distribution sums to " + std::to_string(sum));
      }
    }
  }

  GridSpec spec_;
  std::vector<double> probs_;
};

/// Smallest class index attaining the maximum of a distribution.
inline Label argmax_class(std::span<const double> dist) noexcept {
  std::size_t best = 0;
  for (std::size_t c = 1; c < dist.size(); ++c) {
    if (dist[c] > dist[best]) best = c;
  }
  return static_cast<Label>(best);
}

/// Per-voxel argmax, ties resolved to the lowest class index.
inline LabelGrid argmax_labels(const ProbGrid& p) {
  std::vector<Label> labels(p.num_voxels());
  for (std::size_t v = 0; v < labels.size(); ++v) {
    labels[v] = argmax_class(p.distribution(v));
  }
  return LabelGrid(p.spec(), std::move(labels));
}

/// Ordered class names; the last entry is the free class.
class ClassTable {
 public:
  explicit ClassTable(std::vector<std::string> names) : names_(std::move(names)) {
    if (names_.size() < 2) throw ValidationError("class table needs >= 2 names");
    for (std::size_t i = 0; i < names_.size(); ++i) {
      for (std::size_t j = i + 1; j < names_.size(); ++j) {
        if (names_[i] == names_[j]) {
          throw ValidationError("duplicate class name '" + names_[i] + "'");
        }
      }
    }
  }

  /// The 17 semantic classes of the occupancy challenge plus "free".
  static ClassTable challenge() {
    return ClassTable({"others", "barrier", "bicycle", "bus", "car",
                       "construction_vehicle", "motorcycle", "pedestrian",
                       "traffic_cone", "trailer", "truck", "driveable_surface",
                       "other_flat", "sidewalk", "terrain", "manmade",
                       "vegetation", "free"});
  }

  /// Challenge names for 18 classes, otherwise class_0 .. class_{n-2}, free.
  static ClassTable for_classes(std::uint32_t num_classes) {
    if (num_classes == 18) return challenge();
    std::vector<std::string> names;
    for (std::uint32_t c = 0; c + 1 < num_classes; ++c) {
      names.push_back("class_" + std::to_string(c));
    }
    names.emplace_back("free");
    return ClassTable(std::move(names));
  }

  std::size_t size() const noexcept { return names_.size(); }
  const std::string& name(std::size_t c) const { return names_.at(c); }
  const std::vector<std::string>& names() const noexcept { return names_; }

  std::optional<std::size_t> index_of(const std::string& name) const {
    auto it = std::find(names_.begin(), names_.end(), name);
    if (it == names_.end()) return std::nullopt;
    return static_cast<std::size_t>(it - names_.begin());
  }

 private:
  std::vector<std::string> names_;
};

}  // namespace occkit
