#pragma once

// Occupancy head: BEV queries -> two-layer MLP -> 3D UNet -> per-voxel
// classifier, with reverse-mode gradients of the training loss.
//
// UNet layout (s = tanh(conv(.)), pool = 2x average, up = 2x nearest):
//
//   scale 1:  s1 = s(in)                          out = s([up(d2), s1])
//   scale 2:  s2 = s(pool(s1))                    d2  = s([up(d3), s2])
//   scale 4:  s3 = s(pool(s2))                    d3  = s([up(b), s3])
//   scale 8:  b  = s(pool(s3))

#include <cstddef>
#include <string>
#include <vector>

#include "occkit/grid.hpp"
#include "occkit/head/layers.hpp"
#include "occkit/head/loss.hpp"
#include "occkit/head/params.hpp"
#include "occkit/head/volume.hpp"

namespace occkit::head {

namespace detail {

inline void check_bev(const BevQueryGrid& q, const HeadParams& params) {
  if (q.c != params.config.bev_channels) {
    throw ShapeError("bev query width " + std::to_string(q.c) + " != mlp input width " +
                     std::to_string(params.config.bev_channels));
  }
}

struct MlpTape {
  std::vector<double> hidden;  // tanh activations, cells x mlp_hidden
};

inline Volume mlp_forward(const BevQueryGrid& q, const HeadParams& params, MlpTape* tape) {
  check_bev(q, params);
  std::vector<double> hidden = dense_forward(params.mlp_in, q.data, q.cells());
  tanh_inplace(hidden);
  std::vector<double> out = dense_forward(params.mlp_out, hidden, q.cells());
  if (tape) tape->hidden = std::move(hidden);
  // Each cell's output row is its (z, ch_v) column, already in volume order.
  return Volume(q.h, q.w, params.config.depth, params.config.voxel_channels, std::move(out));
}

}  // namespace detail

/// Per BEV cell: W2 tanh(W1 q + b1) + b2, reshaped to (depth, voxel_channels).
inline VoxelFeatureVolume mlp_decode(const BevQueryGrid& q, const HeadParams& params) {
  return detail::mlp_forward(q, params, nullptr);
}

/// Intermediate UNet activations kept for the backward pass.
struct UnetTape {
  Volume input, s1, p1, s2, p2, s3, p3, bottleneck;
  Volume cat3, d3, cat2, d2, cat1, out;
};

inline void check_unet_input(const Volume& v, const HeadParams& params) {
  if (v.h % 8 || v.w % 8 || v.z % 8) {
    throw ShapeError("unet input dims " + std::to_string(v.h) + "x" + std::to_string(v.w) +
                     "x" + std::to_string(v.z) + " must each be divisible by 8");
  }
  if (v.ch != params.config.voxel_channels) {
    throw ShapeError("unet input channels != voxel_channels");
  }
}

inline UnetTape unet3d_forward_tape(const Volume& input, const HeadParams& p) {
  check_unet_input(input, p);
  UnetTape t;
  t.input = input;
  t.s1 = tanh_volume(conv3d_forward(p.enc1, t.input));
  t.p1 = avg_pool2(t.s1);
  t.s2 = tanh_volume(conv3d_forward(p.enc2, t.p1));
  t.p2 = avg_pool2(t.s2);
  t.s3 = tanh_volume(conv3d_forward(p.enc3, t.p2));
  t.p3 = avg_pool2(t.s3);
  t.bottleneck = tanh_volume(conv3d_forward(p.bottleneck, t.p3));
  t.cat3 = concat_channels(upsample2(t.bottleneck), t.s3);
  t.d3 = tanh_volume(conv3d_forward(p.dec3, t.cat3));
  t.cat2 = concat_channels(upsample2(t.d3), t.s2);
  t.d2 = tanh_volume(conv3d_forward(p.dec2, t.cat2));
  t.cat1 = concat_channels(upsample2(t.d2), t.s1);
  t.out = tanh_volume(conv3d_forward(p.dec1, t.cat1));
  return t;
}

/// Output has the input's spatial dims and config.out_channels channels.
inline VoxelFeatureVolume unet3d_forward(const VoxelFeatureVolume& v, const HeadParams& params) {
  return unet3d_forward_tape(v, params).out;
}

/// Per-voxel logits W_cls f + b_cls.
inline Logits classify(const VoxelFeatureVolume& v, const HeadParams& params) {
  if (v.ch != params.classifier.in) throw ShapeError("classifier input channels mismatch");
  return Volume(v.h, v.w, v.z, params.classifier.out,
                dense_forward(params.classifier, v.data, v.voxels()));
}

/// Logits of the whole head.
inline Logits head_forward(const BevQueryGrid& q, const HeadParams& params) {
  return classify(unet3d_forward(mlp_decode(q, params), params), params);
}

/// total_loss of the head's logits, weighted by params.loss_weights.
inline double head_loss(const BevQueryGrid& q, const LabelGrid& gt, const VoxelMask* mask,
                        const HeadParams& params) {
  return total_loss(head_forward(q, params), gt, mask, params.loss_weights.ce,
                    params.loss_weights.dice);
}

struct BackwardOptions {
  /// Drops the softmax Jacobian from the dice gradient. Only for
  /// demonstrating that gradient checks catch a wrong backward pass.
  bool corrupt_dice_gradient = false;
};

struct HeadGradients {
  /// Same layout as the parameters; loss_weights is unused.
  HeadParams params;
  /// Gradient with respect to the BEV queries.
  BevQueryGrid input;
  double loss = 0.0;
};

/// Analytic gradient of total_loss with respect to every parameter.
inline HeadGradients backward(const BevQueryGrid& q, const LabelGrid& gt, const VoxelMask* mask,
                              const HeadParams& p, BackwardOptions options = {}) {
  p.validate();
  detail::MlpTape mlp_tape;
  const Volume decoded = detail::mlp_forward(q, p, &mlp_tape);
  const UnetTape t = unet3d_forward_tape(decoded, p);
  const Logits logits = classify(t.out, p);
  const double lce = p.loss_weights.ce;
  const double ldice = p.loss_weights.dice;

  HeadGradients g{HeadParams::zeros(p.config), BevQueryGrid::zeros(q.h, q.w, q.c), 0.0};
  g.params.loss_weights = p.loss_weights;
  g.loss = total_loss(logits, gt, mask, lce, ldice);

  Logits glogits = Logits::zeros(logits.h, logits.w, logits.z, logits.ch);
  if (lce != 0.0) {
    const Logits gce = ce_loss_grad(logits, gt, mask);
    for (std::size_t i = 0; i < glogits.data.size(); ++i) glogits.data[i] += lce * gce.data[i];
  }
  if (ldice != 0.0) {
    const Logits gd = dice_loss_grad(logits, gt, options.corrupt_dice_gradient);
    for (std::size_t i = 0; i < glogits.data.size(); ++i) glogits.data[i] += ldice * gd.data[i];
  }

  // Classifier.
  const std::vector<double> gfeat =
      dense_backward(p.classifier, t.out.data, glogits.data, t.out.voxels(), g.params.classifier);
  Volume gout(t.out.h, t.out.w, t.out.z, t.out.ch, gfeat);

  // Decoder, scale 1.
  Volume gcat1 = conv3d_backward(p.dec1, t.cat1, tanh_volume_backward(t.out, gout), g.params.dec1);
  auto [gup1, gs1] = split_channels(gcat1, t.d2.ch);
  Volume gd2 = upsample2_backward(gup1);

  // Decoder, scale 2.
  Volume gcat2 = conv3d_backward(p.dec2, t.cat2, tanh_volume_backward(t.d2, gd2), g.params.dec2);
  auto [gup2, gs2] = split_channels(gcat2, t.d3.ch);
  Volume gd3 = upsample2_backward(gup2);

  // Decoder, scale 4.
  Volume gcat3 = conv3d_backward(p.dec3, t.cat3, tanh_volume_backward(t.d3, gd3), g.params.dec3);
  auto [gup3, gs3] = split_channels(gcat3, t.bottleneck.ch);
  Volume gb = upsample2_backward(gup3);

  // Bottleneck and encoder, adding skip gradients on the way down.
  Volume gp3 = conv3d_backward(p.bottleneck, t.p3, tanh_volume_backward(t.bottleneck, gb),
                               g.params.bottleneck);
  Volume gs3_total = avg_pool2_backward(gp3, t.s3);
  for (std::size_t i = 0; i < gs3_total.data.size(); ++i) gs3_total.data[i] += gs3.data[i];

  Volume gp2 = conv3d_backward(p.enc3, t.p2, tanh_volume_backward(t.s3, gs3_total), g.params.enc3);
  Volume gs2_total = avg_pool2_backward(gp2, t.s2);
  for (std::size_t i = 0; i < gs2_total.data.size(); ++i) gs2_total.data[i] += gs2.data[i];

  Volume gp1 = conv3d_backward(p.enc2, t.p1, tanh_volume_backward(t.s2, gs2_total), g.params.enc2);
  Volume gs1_total = avg_pool2_backward(gp1, t.s1);
  for (std::size_t i = 0; i < gs1_total.data.size(); ++i) gs1_total.data[i] += gs1.data[i];

  Volume gdecoded =
      conv3d_backward(p.enc1, t.input, tanh_volume_backward(t.s1, gs1_total), g.params.enc1);

  // MLP.
  const std::vector<double> ghidden =
      dense_backward(p.mlp_out, mlp_tape.hidden, gdecoded.data, q.cells(), g.params.mlp_out);
  const std::vector<double> gpre = tanh_backward(mlp_tape.hidden, ghidden);
  g.input.data = dense_backward(p.mlp_in, q.data, gpre, q.cells(), g.params.mlp_in);
  return g;
}

}  // namespace occkit::head
