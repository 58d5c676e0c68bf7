#pragma once

// Parameters of the occupancy head: two-layer MLP, 3-level 3D UNet and the
// per-voxel classifier.

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "occkit/error.hpp"

namespace occkit::head {

/// Fully connected layer, weight stored out x in row-major.
struct DenseLayer {
  std::size_t in = 0, out = 0;
  std::vector<double> weight;
  std::vector<double> bias;

  static DenseLayer zeros(std::size_t in, std::size_t out) {
    return {in, out, std::vector<double>(in * out, 0.0), std::vector<double>(out, 0.0)};
  }

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

inline constexpr std::size_t kTaps = 27;

/// 3x3x3 convolution, kernel stored [out][in][dx][dy][dz].
struct ConvLayer {
  std::size_t in = 0, out = 0;
  std::vector<double> kernel;
  std::vector<double> bias;

  static ConvLayer zeros(std::size_t in, std::size_t out) {
    return {in, out, std::vector<double>(in * out * kTaps, 0.0),
            std::vector<double>(out, 0.0)};
  }

  std::size_t tap(std::size_t o, std::size_t i, std::size_t t) const noexcept {
    return (o * in + i) * kTaps + t;
  }

  friend bool operator==(const ConvLayer&, const ConvLayer&) = default;
};

struct LossWeights {
  double ce = 1.0;
  double dice = 1.0;

  void validate() const {
    if (!(ce >= 0.0) || !(dice >= 0.0)) throw ValidationError("loss weights must be >= 0");
    if (ce == 0.0 && dice == 0.0) throw ValidationError("loss weights cannot both be zero");
  }

  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

struct HeadConfig {
  std::size_t bev_channels = 4;
  std::size_t mlp_hidden = 8;
  /// Z, the number of height bins decoded per BEV cell.
  std::size_t depth = 8;
  /// Channels per decoded voxel. 1 reads F_3D as a plain H x W x Z volume.
  std::size_t voxel_channels = 1;
  /// Encoder widths at scales 1, 2, 4 and 8 (the last is the bottleneck).
  std::array<std::size_t, 4> unet_widths{2, 2, 2, 2};
  std::size_t out_channels = 2;
  std::size_t num_classes = 18;

  friend bool operator==(const HeadConfig&, const HeadConfig&) = default;
};

struct HeadParams {
  HeadConfig config;
  DenseLayer mlp_in;   // bev_channels -> mlp_hidden
  DenseLayer mlp_out;  // mlp_hidden -> depth * voxel_channels
  ConvLayer enc1, enc2, enc3, bottleneck;
  ConvLayer dec3, dec2, dec1;
  DenseLayer classifier;  // out_channels -> num_classes
  LossWeights loss_weights;

  static HeadParams zeros(const HeadConfig& cfg) {
    const auto& wd = cfg.unet_widths;
    HeadParams p;
    p.config = cfg;
    p.mlp_in = DenseLayer::zeros(cfg.bev_channels, cfg.mlp_hidden);
    p.mlp_out = DenseLayer::zeros(cfg.mlp_hidden, cfg.depth * cfg.voxel_channels);
    p.enc1 = ConvLayer::zeros(cfg.voxel_channels, wd[0]);
    p.enc2 = ConvLayer::zeros(wd[0], wd[1]);
    p.enc3 = ConvLayer::zeros(wd[1], wd[2]);
    p.bottleneck = ConvLayer::zeros(wd[2], wd[3]);
    // Decoder convs read [upsampled, skip] concatenated along channels.
    p.dec3 = ConvLayer::zeros(wd[3] + wd[2], wd[2]);
    p.dec2 = ConvLayer::zeros(wd[2] + wd[1], wd[1]);
    p.dec1 = ConvLayer::zeros(wd[1] + wd[0], cfg.out_channels);
    p.classifier = DenseLayer::zeros(cfg.out_channels, cfg.num_classes);
    p.validate();
    return p;
  }

  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases.
  static HeadParams random(const HeadConfig& cfg, std::uint64_t seed, double gain = 1.0) {
    HeadParams p = zeros(cfg);
    std::mt19937_64 rng(seed);
    auto fill = [&](std::vector<double>& v, std::size_t fan_in) {
      const double a = gain / std::sqrt(static_cast<double>(fan_in));
      std::uniform_real_distribution<double> dist(-a, a);
      for (double& x : v) x = dist(rng);
    };
    for (DenseLayer* d : {&p.mlp_in, &p.mlp_out, &p.classifier}) {
      fill(d->weight, d->in);
      fill(d->bias, d->in);
    }
    for (ConvLayer* c : p.convs()) {
      fill(c->kernel, c->in * kTaps);
      fill(c->bias, c->in * kTaps);
    }
    return p;
  }

  std::array<ConvLayer*, 7> convs() noexcept {
    return {&enc1, &enc2, &enc3, &bottleneck, &dec3, &dec2, &dec1};
  }

  /// Calls f(name, values, shape) for every trainable tensor, in a fixed order.
  template <typename F>
  void for_each_tensor(F&& f) {
    visit(*this, f);
  }
  template <typename F>
  void for_each_tensor(F&& f) const {
    visit(*this, f);
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each_tensor([&](std::string_view, const std::vector<double>& v,
                        const std::vector<std::size_t>&) { n += v.size(); });
    return n;
  }

  void validate() const {
    const auto& c = config;
    const auto& wd = c.unet_widths;
    auto dense_ok = [](const DenseLayer& d, std::size_t in, std::size_t out) {
      return d.in == in && d.out == out && d.weight.size() == in * out && d.bias.size() == out;
    };
    auto conv_ok = [](const ConvLayer& k, std::size_t in, std::size_t out) {
      return k.in == in && k.out == out && k.kernel.size() == in * out * kTaps &&
             k.bias.size() == out;
    };
    if (c.bev_channels < 1 || c.mlp_hidden < 1 || c.depth < 1 || c.voxel_channels < 1 ||
        c.out_channels < 1 || c.num_classes < 2) {
      throw ShapeError("head config sizes must be >= 1 (num_classes >= 2)");
    }
    for (auto w : wd) {
      if (w < 1) throw ShapeError("unet widths must be >= 1");
    }
    const bool ok = dense_ok(mlp_in, c.bev_channels, c.mlp_hidden) &&
                    dense_ok(mlp_out, c.mlp_hidden, c.depth * c.voxel_channels) &&
                    conv_ok(enc1, c.voxel_channels, wd[0]) && conv_ok(enc2, wd[0], wd[1]) &&
                    conv_ok(enc3, wd[1], wd[2]) && conv_ok(bottleneck, wd[2], wd[3]) &&
                    conv_ok(dec3, wd[3] + wd[2], wd[2]) &&
                    conv_ok(dec2, wd[2] + wd[1], wd[1]) &&
                    conv_ok(dec1, wd[1] + wd[0], c.out_channels) &&
                    dense_ok(classifier, c.out_channels, c.num_classes);
    if (!ok) throw ShapeError("head parameter shapes inconsistent with config");
    loss_weights.validate();
  }

  friend bool operator==(const HeadParams&, const HeadParams&) = default;

 private:
  template <typename Self, typename F>
  static void visit(Self& self, F& f) {
    auto dense = [&](std::string_view name, auto& d) {
      f(std::string(name) + ".weight", d.weight, std::vector<std::size_t>{d.out, d.in});
      f(std::string(name) + ".bias", d.bias, std::vector<std::size_t>{d.out});
    };
    auto conv = [&](std::string_view name, auto& k) {
      f(std::string(name) + ".weight", k.kernel,
        std::vector<std::size_t>{k.out, k.in, 3, 3, 3});
      f(std::string(name) + ".bias", k.bias, std::vector<std::size_t>{k.out});
    };
    dense("mlp.fc1", self.mlp_in);
    dense("mlp.fc2", self.mlp_out);
    conv("unet.enc1", self.enc1);
    conv("unet.enc2", self.enc2);
    conv("unet.enc3", self.enc3);
    conv("unet.bottleneck", self.bottleneck);
    conv("unet.dec3", self.dec3);
    conv("unet.dec2", self.dec2);
    conv("unet.dec1", self.dec1);
    dense("cls", self.classifier);
  }
};

}  // namespace occkit::head
