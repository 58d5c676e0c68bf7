#pragma once

// Cross-entropy and soft dice losses over per-voxel logits, with their
// gradients with respect to the logits.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "occkit/grid.hpp"
#include "occkit/head/volume.hpp"

namespace occkit::head {

/// Smoothing term of the dice ratio.
inline constexpr double kDiceEpsilon = 1e-5;

using Logits = VoxelFeatureVolume;

namespace detail {

/// Neumaier-compensated running sum. Keeps loss reductions accurate to about
/// one rounding, which finite-difference checks depend on.
class CompensatedSum {
 public:
  void add(double x) noexcept {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x)) {
      carry_ += (sum_ - t) + x;
    } else {
      carry_ += (x - t) + sum_;
    }
    sum_ = t;
  }
  double value() const noexcept { return sum_ + carry_; }

 private:
  double sum_ = 0.0;
  double carry_ = 0.0;
};

inline void check_aligned(const Logits& logits, const LabelGrid& gt) {
  const auto& d = gt.spec().dims;
  if (logits.h != d[0] || logits.w != d[1] || logits.z != d[2]) {
    throw ShapeError("logits and labels have different spatial dims");
  }
  if (logits.ch != gt.spec().num_classes) {
    throw ShapeError("logit channels != num_classes");
  }
}

inline void check_mask(const LabelGrid& gt, const VoxelMask* mask) {
  if (mask) require_same_spec(gt.spec(), mask->spec());
}

/// Numerically stable softmax of every voxel.
inline std::vector<double> softmax(const Logits& logits) {
  std::vector<double> p(logits.data.size());
  const std::size_t k = logits.ch;
  for (std::size_t v = 0; v < logits.voxels(); ++v) {
    const double* z = logits.data.data() + v * k;
    double* pv = p.data() + v * k;
    const double m = *std::max_element(z, z + k);
    double sum = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      pv[c] = std::exp(z[c] - m);
      sum += pv[c];
    }
    for (std::size_t c = 0; c < k; ++c) pv[c] /= sum;
  }
  return p;
}

inline double log_sum_exp(const double* z, std::size_t k) {
  const double m = *std::max_element(z, z + k);
  double sum = 0.0;
  for (std::size_t c = 0; c < k; ++c) sum += std::exp(z[c] - m);
  return m + std::log(sum);
}

inline std::size_t included_count(const LabelGrid& gt, const VoxelMask* mask) {
  const std::size_t n = mask ? mask->count() : gt.size();
  if (n == 0) throw ValidationError("cross-entropy over an empty voxel set");
  return n;
}

struct DiceSums {
  std::vector<double> inter, pred, truth;
};

inline DiceSums dice_sums(const std::vector<double>& p, const LabelGrid& gt, std::size_t k) {
  std::vector<CompensatedSum> inter(k), pred(k);
  DiceSums s{std::vector<double>(k, 0.0), std::vector<double>(k, 0.0),
             std::vector<double>(k, 0.0)};
  for (std::size_t v = 0; v < gt.size(); ++v) {
    const double* pv = p.data() + v * k;
    for (std::size_t c = 0; c < k; ++c) pred[c].add(pv[c]);
    inter[gt[v]].add(pv[gt[v]]);
    s.truth[gt[v]] += 1.0;
  }
  for (std::size_t c = 0; c < k; ++c) {
    s.inter[c] = inter[c].value();
    s.pred[c] = pred[c].value();
  }
  return s;
}

}  // namespace detail

/// Mean of -log softmax(logits)[gt] over voxels in the mask (all voxels
/// when `mask` is null).
inline double ce_loss(const Logits& logits, const LabelGrid& gt, const VoxelMask* mask = nullptr) {
  detail::check_aligned(logits, gt);
  detail::check_mask(gt, mask);
  const std::size_t n = detail::included_count(gt, mask);
  const std::size_t k = logits.ch;
  detail::CompensatedSum total;
  for (std::size_t v = 0; v < gt.size(); ++v) {
    if (mask && !(*mask)[v]) continue;
    const double* z = logits.data.data() + v * k;
    total.add(detail::log_sum_exp(z, k) - z[gt[v]]);
  }
  return total.value() / static_cast<double>(n);
}

inline Logits ce_loss_grad(const Logits& logits, const LabelGrid& gt,
                           const VoxelMask* mask = nullptr) {
  detail::check_aligned(logits, gt);
  detail::check_mask(gt, mask);
  const double inv_n = 1.0 / static_cast<double>(detail::included_count(gt, mask));
  const std::size_t k = logits.ch;
  Logits g = Logits::zeros(logits.h, logits.w, logits.z, k);
  const std::vector<double> p = detail::softmax(logits);
  for (std::size_t v = 0; v < gt.size(); ++v) {
    if (mask && !(*mask)[v]) continue;
    for (std::size_t c = 0; c < k; ++c) {
      g.data[v * k + c] = (p[v * k + c] - (c == gt[v] ? 1.0 : 0.0)) * inv_n;
    }
  }
  return g;
}

/// Soft dice averaged over all classes, free included:
/// mean_c [1 - (2 I_c + eps) / (P_c + G_c + eps)].
inline double dice_loss(const Logits& logits, const LabelGrid& gt) {
  detail::check_aligned(logits, gt);
  const std::size_t k = logits.ch;
  const auto s = detail::dice_sums(detail::softmax(logits), gt, k);
  detail::CompensatedSum total;
  for (std::size_t c = 0; c < k; ++c) {
    total.add(1.0 - (2.0 * s.inter[c] + kDiceEpsilon) / (s.pred[c] + s.truth[c] + kDiceEpsilon));
  }
  return total.value() / static_cast<double>(k);
}

/// Gradient of dice_loss. `skip_softmax_jacobian` returns dL/dp instead of
/// dL/dlogits; it exists so gradient checks can be shown to catch a broken
/// backward pass.
inline Logits dice_loss_grad(const Logits& logits, const LabelGrid& gt,
                             bool skip_softmax_jacobian = false) {
  detail::check_aligned(logits, gt);
  const std::size_t k = logits.ch;
  const std::vector<double> p = detail::softmax(logits);
  const auto s = detail::dice_sums(p, gt, k);
  // dL/dp_vc = -(1/K) [2 g_vc D_c - (2 I_c + eps)] / D_c^2, D_c = P_c + G_c + eps.
  std::vector<double> a(k), b(k);
  for (std::size_t c = 0; c < k; ++c) {
    const double den = s.pred[c] + s.truth[c] + kDiceEpsilon;
    a[c] = -2.0 / (den * static_cast<double>(k));
    b[c] = (2.0 * s.inter[c] + kDiceEpsilon) / (den * den * static_cast<double>(k));
  }
  Logits g = Logits::zeros(logits.h, logits.w, logits.z, k);
  std::vector<double> gp(k);
  for (std::size_t v = 0; v < gt.size(); ++v) {
    const double* pv = p.data() + v * k;
    for (std::size_t c = 0; c < k; ++c) gp[c] = b[c] + (c == gt[v] ? a[c] : 0.0);
    double* gv = g.data.data() + v * k;
    if (skip_softmax_jacobian) {
      std::copy(gp.begin(), gp.end(), gv);
      continue;
    }
    double dot = 0.0;
    for (std::size_t c = 0; c < k; ++c) dot += pv[c] * gp[c];
    for (std::size_t c = 0; c < k; ++c) gv[c] = pv[c] * (gp[c] - dot);
  }
  return g;
}

/// lambda_ce * ce_loss + lambda_dice * dice_loss. A zero weight skips its
/// term entirely.
inline double total_loss(const Logits& logits, const LabelGrid& gt, const VoxelMask* mask,
                         double lambda_ce, double lambda_dice) {
  if (!(lambda_ce >= 0.0) || !(lambda_dice >= 0.0)) {
    throw ValidationError("loss weights must be >= 0");
  }
  double loss = 0.0;
  if (lambda_ce != 0.0) loss += lambda_ce * ce_loss(logits, gt, mask);
  if (lambda_dice != 0.0) loss += lambda_dice * dice_loss(logits, gt);
  return loss;
}

}  // namespace occkit::head
