#pragma once

// Fusion of per-model probability grids.

#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "occkit/grid.hpp"

namespace occkit {

/// One positive weight per fused model.
class EnsembleWeights {
 public:
  explicit EnsembleWeights(std::vector<double> weights)
      : weights_(std::move(weights)) {
    if (weights_.empty()) throw ValidationError("ensemble weights are empty");
    for (double w : weights_) {
      if (!(w > 0.0) || !std::isfinite(w)) {
        throw ValidationError("ensemble weights must be positive and finite");
      }
    }
  }

  static EnsembleWeights uniform(std::size_t n) {
    return EnsembleWeights(std::vector<double>(n, 1.0));
  }

  std::size_t size() const noexcept { return weights_.size(); }
  std::span<const double> values() const noexcept { return weights_; }

  /// Weights divided by their sum.
  std::vector<double> normalized() const {
    double total = 0.0;
    for (double w : weights_) total += w;
    std::vector<double> out(weights_);
    for (double& w : out) w /= total;
    return out;
  }

 private:
  std::vector<double> weights_;
};

enum class FusionStrategy { kWeighted, kMaxProb, kVote };

namespace detail {

using GridRefs = std::span<const std::reference_wrapper<const ProbGrid>>;

inline const GridSpec& common_spec(GridRefs grids) {
  if (grids.empty()) throw ValidationError("ensemble needs at least one grid");
  const GridSpec& spec = grids.front().get().spec();
  for (const ProbGrid& g : grids) require_same_spec(spec, g.spec());
  return spec;
}

}  // namespace detail

/// Convex combination sum_i (w_i / sum w) * p_i, voxel by voxel.
inline ProbGrid weighted_average(detail::GridRefs grids,
                                 const EnsembleWeights& weights) {
  const GridSpec& spec = detail::common_spec(grids);
  if (weights.size() != grids.size()) {
    throw ShapeError("got " + std::to_string(grids.size()) + " grids but " +
                     std::to_string(weights.size()) + " weights");
  }
  const std::vector<double> w = weights.normalized();
  const std::size_t total = spec.num_voxels() * spec.num_classes;
  std::vector<double> out(total, 0.0);
  // Model-outer keeps each input streaming sequentially through memory.
  for (std::size_t i = 0; i < grids.size(); ++i) {
    const std::span<const double> p = grids[i].get().probs();
    const double wi = w[i];
    for (std::size_t j = 0; j < total; ++j) out[j] += wi * p[j];
  }
  return ProbGrid(spec, std::move(out));
}

inline ProbGrid weighted_average(const std::vector<ProbGrid>& grids,
                                 const EnsembleWeights& weights) {
  std::vector<std::reference_wrapper<const ProbGrid>> refs(grids.begin(), grids.end());
  return weighted_average(refs, weights);
}

/// Per voxel, copies the distribution of the most confident model
/// (largest max-class probability; ties go to the lower model index).
inline ProbGrid max_prob_fuse(detail::GridRefs grids) {
  const GridSpec& spec = detail::common_spec(grids);
  const std::size_t k = spec.num_classes;
  std::vector<double> out(spec.num_voxels() * k);
  for (std::size_t v = 0; v < spec.num_voxels(); ++v) {
    std::size_t best_model = 0;
    double best_conf = -1.0;
    for (std::size_t i = 0; i < grids.size(); ++i) {
      const auto d = grids[i].get().distribution(v);
      const double conf = d[argmax_class(d)];
      if (conf > best_conf) {
        best_conf = conf;
        best_model = i;
      }
    }
    const auto src = grids[best_model].get().distribution(v);
    std::copy(src.begin(), src.end(), out.begin() + static_cast<std::ptrdiff_t>(v * k));
  }
  return ProbGrid(spec, std::move(out));
}

inline ProbGrid max_prob_fuse(const std::vector<ProbGrid>& grids) {
  std::vector<std::reference_wrapper<const ProbGrid>> refs(grids.begin(), grids.end());
  return max_prob_fuse(refs);
}

/// Majority vote over each model's argmax label; ties go to the lower class.
inline LabelGrid vote_fuse(detail::GridRefs grids) {
  const GridSpec& spec = detail::common_spec(grids);
  std::vector<Label> out(spec.num_voxels());
  std::vector<std::size_t> tally(spec.num_classes);
  for (std::size_t v = 0; v < spec.num_voxels(); ++v) {
    std::fill(tally.begin(), tally.end(), 0);
    for (const ProbGrid& g : grids) ++tally[argmax_class(g.distribution(v))];
    std::size_t best = 0;
    for (std::size_t c = 1; c < tally.size(); ++c) {
      if (tally[c] > tally[best]) best = c;
    }
    out[v] = static_cast<Label>(best);
  }
  return LabelGrid(spec, std::move(out));
}

inline LabelGrid vote_fuse(const std::vector<ProbGrid>& grids) {
  std::vector<std::reference_wrapper<const ProbGrid>> refs(grids.begin(), grids.end());
  return vote_fuse(refs);
}

inline std::string to_string(FusionStrategy s) {
  switch (s) {
    case FusionStrategy::kWeighted: return "weighted";
    case FusionStrategy::kMaxProb: return "max";
    case FusionStrategy::kVote: return "vote";
  }
  return "weighted";
}

inline FusionStrategy parse_strategy(const std::string& name) {
  if (name == "weighted") return FusionStrategy::kWeighted;
  if (name == "max") return FusionStrategy::kMaxProb;
  if (name == "vote") return FusionStrategy::kVote;
  throw ValidationError("unknown fusion strategy '" + name +
                        "' (expected weighted, max or vote)");
}

}  // namespace occkit
