#pragma once

// Central finite-difference verification of the head's analytic gradients.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "occkit/head/model.hpp"

namespace occkit::head {

/// A small random problem instance: BEV queries, labels, mask and parameters.
struct ToyProblem {
  BevQueryGrid queries;
  LabelGrid labels;
  VoxelMask mask;
  HeadParams params;
};

/// Builds an h x w BEV grid decoded to `config.depth` height bins, labels
/// uniform over all classes, and a mask keeping roughly 80% of voxels.
inline ToyProblem make_toy_problem(std::uint64_t seed, const HeadConfig& config,
                                   std::size_t h = 8, std::size_t w = 8) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<int> label(0, static_cast<int>(config.num_classes) - 1);
  std::bernoulli_distribution keep(0.8);

  BevQueryGrid q = BevQueryGrid::zeros(h, w, config.bev_channels);
  for (double& x : q.data) x = normal(rng);

  GridSpec spec;
  spec.dims = {static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(w),
               static_cast<std::uint32_t>(config.depth)};
  spec.voxel_size = 1.0;
  spec.origin = {0.0, 0.0, 0.0};
  spec.num_classes = static_cast<std::uint32_t>(config.num_classes);
  std::vector<Label> labels(spec.num_voxels());
  for (auto& l : labels) l = static_cast<Label>(label(rng));
  std::vector<std::uint8_t> bits(spec.num_voxels());
  for (auto& b : bits) b = keep(rng) ? 1 : 0;
  bits[0] = 1;

  return {std::move(q), LabelGrid(spec, std::move(labels)), VoxelMask(spec, std::move(bits)),
          HeadParams::random(config, rng())};
}

struct GradCheckOptions {
  double step = 1e-6;
  /// Lower bound on the relative-error denominator. Gradients far below it
  /// are compared in absolute terms, where finite differences only resolve
  /// the loss to roughly machine epsilon / step.
  double denominator_floor = 1e-5;
  BackwardOptions backward;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_tensor;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
};

inline double relative_error(double analytic, double numeric, double floor) {
  const double den = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / den;
}

/// Compares every analytic parameter gradient with
/// (L(theta + h) - L(theta - h)) / 2h.
inline GradCheckResult check_gradients(const BevQueryGrid& q, const LabelGrid& gt,
                                       const VoxelMask* mask, const HeadParams& params,
                                       const GradCheckOptions& options = {}) {
  const HeadGradients grads = backward(q, gt, mask, params, options.backward);

  HeadParams probe = params;
  std::vector<std::pair<std::string, std::vector<double>*>> slots;
  probe.for_each_tensor([&](const std::string& name, std::vector<double>& v,
                            const std::vector<std::size_t>&) { slots.emplace_back(name, &v); });
  std::vector<const std::vector<double>*> analytic;
  grads.params.for_each_tensor([&](const std::string&, const std::vector<double>& v,
                                   const std::vector<std::size_t>&) { analytic.push_back(&v); });

  GradCheckResult result;
  const double h = options.step;
  for (std::size_t s = 0; s < slots.size(); ++s) {
    std::vector<double>& values = *slots[s].second;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + h;
      const double up = head_loss(q, gt, mask, probe);
      values[i] = saved - h;
      const double down = head_loss(q, gt, mask, probe);
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = (*analytic[s])[i];
      const double err = relative_error(a, numeric, options.denominator_floor);
      ++result.checked;
      if (err > result.max_rel_error || result.checked == 1) {
        result.max_rel_error = err;
        result.worst_tensor = slots[s].first;
        result.worst_index = i;
        result.worst_analytic = a;
        result.worst_numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace occkit::head
