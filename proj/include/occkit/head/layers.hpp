#pragma once

// Forward operators of the head and their adjoints.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

#include "occkit/head/params.hpp"
#include "occkit/head/volume.hpp"

namespace occkit::head {

using Volume = VoxelFeatureVolume;

/// y = W x + b applied to `rows` consecutive input vectors.
inline std::vector<double> dense_forward(const DenseLayer& layer, const std::vector<double>& x,
                                         std::size_t rows) {
  std::vector<double> y(rows * layer.out);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * layer.in;
    double* yr = y.data() + r * layer.out;
    for (std::size_t j = 0; j < layer.out; ++j) {
      const double* wj = layer.weight.data() + j * layer.in;
      double acc = layer.bias[j];
      for (std::size_t i = 0; i < layer.in; ++i) acc += wj[i] * xr[i];
      yr[j] = acc;
    }
  }
  return y;
}

/// Accumulates dW, db and returns dx for dense_forward.
inline std::vector<double> dense_backward(const DenseLayer& layer, const std::vector<double>& x,
                                          const std::vector<double>& gy, std::size_t rows,
                                          DenseLayer& grad) {
  std::vector<double> gx(rows * layer.in, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * layer.in;
    const double* gr = gy.data() + r * layer.out;
    double* gxr = gx.data() + r * layer.in;
    for (std::size_t j = 0; j < layer.out; ++j) {
      const double g = gr[j];
      if (g == 0.0) continue;
      grad.bias[j] += g;
      const double* wj = layer.weight.data() + j * layer.in;
      double* gwj = grad.weight.data() + j * layer.in;
      for (std::size_t i = 0; i < layer.in; ++i) {
        gwj[i] += g * xr[i];
        gxr[i] += g * wj[i];
      }
    }
  }
  return gx;
}

inline void tanh_inplace(std::vector<double>& v) {
  for (double& x : v) x = std::tanh(x);
}

/// Gradient through y = tanh(u), given y.
inline std::vector<double> tanh_backward(const std::vector<double>& y,
                                         const std::vector<double>& gy) {
  std::vector<double> gu(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) gu[i] = gy[i] * (1.0 - y[i] * y[i]);
  return gu;
}

/// 3x3x3 cross-correlation, stride 1, zero padding 1. Returns pre-activation.
inline Volume conv3d_forward(const ConvLayer& k, const Volume& in) {
  if (in.ch != k.in) throw ShapeError("conv3d input channels mismatch");
  Volume out = Volume::zeros(in.h, in.w, in.z, k.out);
  for (std::size_t x = 0; x < in.h; ++x) {
    for (std::size_t y = 0; y < in.w; ++y) {
      for (std::size_t zz = 0; zz < in.z; ++zz) {
        double* o = &out.at(x, y, zz, 0);
        for (std::size_t c = 0; c < k.out; ++c) o[c] = k.bias[c];
        for (int dx = -1; dx <= 1; ++dx) {
          const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x) + dx;
          if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(in.h)) continue;
          for (int dy = -1; dy <= 1; ++dy) {
            const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y) + dy;
            if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(in.w)) continue;
            for (int dz = -1; dz <= 1; ++dz) {
              const std::ptrdiff_t sz = static_cast<std::ptrdiff_t>(zz) + dz;
              if (sz < 0 || sz >= static_cast<std::ptrdiff_t>(in.z)) continue;
              const std::size_t t = static_cast<std::size_t>((dx + 1) * 9 + (dy + 1) * 3 + dz + 1);
              const double* s = in.data.data() + in.index(static_cast<std::size_t>(sx),
                                                           static_cast<std::size_t>(sy),
                                                           static_cast<std::size_t>(sz), 0);
              for (std::size_t c = 0; c < k.out; ++c) {
                double acc = 0.0;
                for (std::size_t i = 0; i < k.in; ++i) acc += k.kernel[k.tap(c, i, t)] * s[i];
                o[c] += acc;
              }
            }
          }
        }
      }
    }
  }
  return out;
}

/// Adjoint of conv3d_forward. Accumulates kernel/bias gradients into `grad`
/// and returns the input gradient.
inline Volume conv3d_backward(const ConvLayer& k, const Volume& in, const Volume& gout,
                              ConvLayer& grad) {
  Volume gin = Volume::zeros(in.h, in.w, in.z, in.ch);
  for (std::size_t x = 0; x < in.h; ++x) {
    for (std::size_t y = 0; y < in.w; ++y) {
      for (std::size_t zz = 0; zz < in.z; ++zz) {
        const double* g = gout.data.data() + gout.index(x, y, zz, 0);
        for (std::size_t c = 0; c < k.out; ++c) grad.bias[c] += g[c];
        for (int dx = -1; dx <= 1; ++dx) {
          const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x) + dx;
          if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(in.h)) continue;
          for (int dy = -1; dy <= 1; ++dy) {
            const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y) + dy;
            if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(in.w)) continue;
            for (int dz = -1; dz <= 1; ++dz) {
              const std::ptrdiff_t sz = static_cast<std::ptrdiff_t>(zz) + dz;
              if (sz < 0 || sz >= static_cast<std::ptrdiff_t>(in.z)) continue;
              const std::size_t t = static_cast<std::size_t>((dx + 1) * 9 + (dy + 1) * 3 + dz + 1);
              const std::size_t base = in.index(static_cast<std::size_t>(sx),
                                                static_cast<std::size_t>(sy),
                                                static_cast<std::size_t>(sz), 0);
              for (std::size_t c = 0; c < k.out; ++c) {
                const double gc = g[c];
                for (std::size_t i = 0; i < k.in; ++i) {
                  grad.kernel[k.tap(c, i, t)] += gc * in.data[base + i];
                  gin.data[base + i] += gc * k.kernel[k.tap(c, i, t)];
                }
              }
            }
          }
        }
      }
    }
  }
  return gin;
}

/// 2x average pooling along every spatial axis.
inline Volume avg_pool2(const Volume& in) {
  if (in.h % 2 || in.w % 2 || in.z % 2) throw ShapeError("avg_pool2 needs even dims");
  Volume out = Volume::zeros(in.h / 2, in.w / 2, in.z / 2, in.ch);
  for (std::size_t x = 0; x < in.h; ++x) {
    for (std::size_t y = 0; y < in.w; ++y) {
      for (std::size_t zz = 0; zz < in.z; ++zz) {
        for (std::size_t c = 0; c < in.ch; ++c) {
          out.at(x / 2, y / 2, zz / 2, c) += in.at(x, y, zz, c) / 8.0;
        }
      }
    }
  }
  return out;
}

inline Volume avg_pool2_backward(const Volume& gout, const Volume& in_shape) {
  Volume gin = Volume::zeros(in_shape.h, in_shape.w, in_shape.z, in_shape.ch);
  for (std::size_t x = 0; x < gin.h; ++x) {
    for (std::size_t y = 0; y < gin.w; ++y) {
      for (std::size_t zz = 0; zz < gin.z; ++zz) {
        for (std::size_t c = 0; c < gin.ch; ++c) {
          gin.at(x, y, zz, c) = gout.at(x / 2, y / 2, zz / 2, c) / 8.0;
        }
      }
    }
  }
  return gin;
}

/// 2x nearest-neighbour upsampling.
inline Volume upsample2(const Volume& in) {
  Volume out = Volume::zeros(in.h * 2, in.w * 2, in.z * 2, in.ch);
  for (std::size_t x = 0; x < out.h; ++x) {
    for (std::size_t y = 0; y < out.w; ++y) {
      for (std::size_t zz = 0; zz < out.z; ++zz) {
        for (std::size_t c = 0; c < in.ch; ++c) {
          out.at(x, y, zz, c) = in.at(x / 2, y / 2, zz / 2, c);
        }
      }
    }
  }
  return out;
}

inline Volume upsample2_backward(const Volume& gout) {
  Volume gin = Volume::zeros(gout.h / 2, gout.w / 2, gout.z / 2, gout.ch);
  for (std::size_t x = 0; x < gout.h; ++x) {
    for (std::size_t y = 0; y < gout.w; ++y) {
      for (std::size_t zz = 0; zz < gout.z; ++zz) {
        for (std::size_t c = 0; c < gout.ch; ++c) {
          gin.at(x / 2, y / 2, zz / 2, c) += gout.at(x, y, zz, c);
        }
      }
    }
  }
  return gin;
}

/// Channel concatenation [a, b].
inline Volume concat_channels(const Volume& a, const Volume& b) {
  if (a.h != b.h || a.w != b.w || a.z != b.z) throw ShapeError("concat spatial mismatch");
  Volume out = Volume::zeros(a.h, a.w, a.z, a.ch + b.ch);
  for (std::size_t v = 0; v < a.voxels(); ++v) {
    std::copy_n(a.data.begin() + static_cast<std::ptrdiff_t>(v * a.ch), a.ch,
                out.data.begin() + static_cast<std::ptrdiff_t>(v * out.ch));
    std::copy_n(b.data.begin() + static_cast<std::ptrdiff_t>(v * b.ch), b.ch,
                out.data.begin() + static_cast<std::ptrdiff_t>(v * out.ch + a.ch));
  }
  return out;
}

/// Splits a concatenated gradient back into its two channel groups.
inline std::pair<Volume, Volume> split_channels(const Volume& g, std::size_t first) {
  Volume a = Volume::zeros(g.h, g.w, g.z, first);
  Volume b = Volume::zeros(g.h, g.w, g.z, g.ch - first);
  for (std::size_t v = 0; v < g.voxels(); ++v) {
    for (std::size_t c = 0; c < g.ch; ++c) {
      const double val = g.data[v * g.ch + c];
      if (c < first) {
        a.data[v * a.ch + c] = val;
      } else {
        b.data[v * b.ch + c - first] = val;
      }
    }
  }
  return {std::move(a), std::move(b)};
}

inline Volume tanh_volume(Volume v) {
  tanh_inplace(v.data);
  return v;
}

inline Volume tanh_volume_backward(const Volume& y, const Volume& gy) {
  return Volume(y.h, y.w, y.z, y.ch, tanh_backward(y.data, gy.data));
}

}  // namespace occkit::head
