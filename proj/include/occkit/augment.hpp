#pragma once

// Cutout augmentation for multi-camera image sets.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "occkit/error.hpp"

namespace occkit {

/// splitmix64 generator. The exact stream is part of the cutout contract.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t state) noexcept : state_(state) {}

  std::uint64_t next() noexcept {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t state_;
};

/// Stream for image i starts at seed ^ (i * 0x9E3779B97F4A7C15).
inline SplitMix64 image_stream(std::uint64_t seed, std::size_t image) noexcept {
  return SplitMix64(seed ^ (static_cast<std::uint64_t>(image) * 0x9E3779B97F4A7C15ULL));
}

/// N images of h x w pixels with ch interleaved channels, image-major.
template <typename T>
struct ImageSet {
  std::size_t n = 0, h = 0, w = 0, ch = 0;
  std::vector<T> data;

  ImageSet() = default;
  ImageSet(std::size_t n_, std::size_t h_, std::size_t w_, std::size_t ch_,
           std::vector<T> data_)
      : n(n_), h(h_), w(w_), ch(ch_), data(std::move(data_)) {
    if (n < 1 || h < 1 || w < 1 || ch < 1) {
      throw ValidationError("image set dims must be >= 1");
    }
    if (data.size() != n * h * w * ch) {
      throw ShapeError("image data length " + std::to_string(data.size()) +
                       " != n*h*w*ch");
    }
  }

  std::size_t offset(std::size_t i, std::size_t y, std::size_t x) const noexcept {
    return ((i * h + y) * w + x) * ch;
  }

  friend bool operator==(const ImageSet&, const ImageSet&) = default;
};

struct CutoutSpec {
  std::size_t num_holes = 1;
  std::size_t hole_h = 1;
  std::size_t hole_w = 1;
  double fill = 0.0;
  std::uint64_t seed = 0;

  /// Holes sized as a fraction of the image, at least one pixel.
  static CutoutSpec relative(std::size_t h, std::size_t w, double fraction,
                             std::size_t num_holes, std::uint64_t seed) {
    if (!(fraction > 0.0)) throw ValidationError("cutout size fraction must be > 0");
    auto scaled = [fraction](std::size_t d) {
      const auto s = static_cast<std::size_t>(fraction * static_cast<double>(d) + 0.5);
      return std::max<std::size_t>(1, s);
    };
    return CutoutSpec{num_holes, scaled(h), scaled(w), 0.0, seed};
  }

  void validate() const {
    if (hole_h < 1 || hole_w < 1) throw ValidationError("cutout hole dims must be >= 1");
  }
};

/// Half-open pixel rectangle [y0, y1) x [x0, x1).
struct HoleRect {
  std::size_t y0, y1, x0, x1;
  friend bool operator==(const HoleRect&, const HoleRect&) = default;
};

/// Holes applied to one image. Hole k takes draws 2k (row) and 2k+1 (column)
/// from the image's stream; the rectangle starts hole/2 before the center
/// and is clipped to the image.
inline std::vector<HoleRect> cutout_holes(const CutoutSpec& spec, std::size_t image,
                                          std::size_t h, std::size_t w) {
  spec.validate();
  SplitMix64 rng = image_stream(spec.seed, image);
  std::vector<HoleRect> holes;
  holes.reserve(spec.num_holes);
  auto span = [](std::size_t center, std::size_t size, std::size_t limit) {
    const auto start = static_cast<std::int64_t>(center) - static_cast<std::int64_t>(size / 2);
    const auto end = start + static_cast<std::int64_t>(size);
    const auto lo = static_cast<std::size_t>(std::max<std::int64_t>(0, start));
    const auto hi = static_cast<std::size_t>(
        std::min<std::int64_t>(static_cast<std::int64_t>(limit), end));
    return std::pair{lo, hi};
  };
  for (std::size_t k = 0; k < spec.num_holes; ++k) {
    const std::size_t cy = static_cast<std::size_t>(rng.next() % h);
    const std::size_t cx = static_cast<std::size_t>(rng.next() % w);
    const auto [y0, y1] = span(cy, spec.hole_h, h);
    const auto [x0, x1] = span(cx, spec.hole_w, w);
    holes.push_back({y0, y1, x0, x1});
  }
  return holes;
}

/// Writes `fill` into every channel of each sampled hole; other pixels are
/// copied unchanged.
template <typename T>
ImageSet<T> cutout(const ImageSet<T>& imgs, const CutoutSpec& spec) {
  ImageSet<T> out = imgs;
  const T fill = static_cast<T>(spec.fill);
  for (std::size_t i = 0; i < imgs.n; ++i) {
    for (const HoleRect& r : cutout_holes(spec, i, imgs.h, imgs.w)) {
      for (std::size_t y = r.y0; y < r.y1; ++y) {
        for (std::size_t x = r.x0; x < r.x1; ++x) {
          auto it = out.data.begin() + static_cast<std::ptrdiff_t>(out.offset(i, y, x));
          std::fill(it, it + static_cast<std::ptrdiff_t>(imgs.ch), fill);
        }
      }
    }
  }
  return out;
}

}  // namespace occkit
