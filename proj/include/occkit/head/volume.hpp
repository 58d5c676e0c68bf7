#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "occkit/error.hpp"

namespace occkit::head {

/// BEV queries: h x w cells with c embedding channels, channel innermost.
struct BevQueryGrid {
  std::size_t h = 0, w = 0, c = 0;
  std::vector<double> data;

  BevQueryGrid() = default;
  BevQueryGrid(std::size_t h_, std::size_t w_, std::size_t c_, std::vector<double> d)
      : h(h_), w(w_), c(c_), data(std::move(d)) {
    if (h < 1 || w < 1 || c < 1) throw ShapeError("bev grid dims must be >= 1");
    if (data.size() != h * w * c) throw ShapeError("bev grid data length mismatch");
  }

  static BevQueryGrid zeros(std::size_t h, std::size_t w, std::size_t c) {
    return BevQueryGrid(h, w, c, std::vector<double>(h * w * c, 0.0));
  }

  std::size_t cells() const noexcept { return h * w; }
  double* cell(std::size_t i) noexcept { return data.data() + i * c; }
  const double* cell(std::size_t i) const noexcept { return data.data() + i * c; }
};

/// Dense feature volume h x w x z with ch channels. Spatial layout matches
/// the voxel grids (x-major, then y, then z); channels are innermost.
struct VoxelFeatureVolume {
  std::size_t h = 0, w = 0, z = 0, ch = 0;
  std::vector<double> data;

  VoxelFeatureVolume() = default;
  VoxelFeatureVolume(std::size_t h_, std::size_t w_, std::size_t z_, std::size_t ch_,
                     std::vector<double> d)
      : h(h_), w(w_), z(z_), ch(ch_), data(std::move(d)) {
    if (h < 1 || w < 1 || z < 1 || ch < 1) {
      throw ShapeError("feature volume dims must be >= 1");
    }
    if (data.size() != h * w * z * ch) {
      throw ShapeError("feature volume data length mismatch");
    }
  }

  static VoxelFeatureVolume zeros(std::size_t h, std::size_t w, std::size_t z,
                                  std::size_t ch) {
    return VoxelFeatureVolume(h, w, z, ch, std::vector<double>(h * w * z * ch, 0.0));
  }

  std::size_t voxels() const noexcept { return h * w * z; }

  std::size_t index(std::size_t x, std::size_t y, std::size_t k, std::size_t c) const noexcept {
    return ((x * w + y) * z + k) * ch + c;
  }

  double& at(std::size_t x, std::size_t y, std::size_t k, std::size_t c) noexcept {
    return data[index(x, y, k, c)];
  }
  double at(std::size_t x, std::size_t y, std::size_t k, std::size_t c) const noexcept {
    return data[index(x, y, k, c)];
  }

  bool same_shape(const VoxelFeatureVolume& o) const noexcept {
    return h == o.h && w == o.w && z == o.z && ch == o.ch;
  }

  friend bool operator==(const VoxelFeatureVolume&, const VoxelFeatureVolume&) = default;
};

}  // namespace occkit::head
