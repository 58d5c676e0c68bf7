#pragma once

// Built-in verification suites run by `occkit selfcheck`.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <ostream>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "occkit/augment.hpp"
#include "occkit/det2occ.hpp"
#include "occkit/ensemble.hpp"
#include "occkit/grid.hpp"
#include "occkit/head/gradcheck.hpp"
#include "occkit/io.hpp"
#include "occkit/metrics.hpp"

namespace occkit::selfcheck {

inline constexpr double kGradientTolerance = 1e-4;

struct Options {
  /// Reduced trial counts, one gradient seed.
  bool quick = false;
  /// Corrupts the dice gradient to demonstrate that the suite fails.
  bool corrupt_dice_gradient = false;
};

struct SuiteResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct Report {
  std::vector<SuiteResult> suites;
  double max_gradient_error = 0.0;

  bool passed() const {
    for (const auto& s : suites) {
      if (!s.passed) return false;
    }
    return true;
  }
};

namespace detail {

inline GridSpec small_spec(std::uint32_t nx, std::uint32_t ny, std::uint32_t nz,
                           std::uint32_t classes) {
  return GridSpec::make({nx, ny, nz}, 1.0, {0.0, 0.0, 0.0}, classes);
}

inline LabelGrid random_labels(const GridSpec& spec, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> d(0, static_cast<int>(spec.num_classes) - 1);
  std::vector<Label> l(spec.num_voxels());
  for (auto& x : l) x = static_cast<Label>(d(rng));
  return LabelGrid(spec, std::move(l));
}

inline VoxelMask random_mask(const GridSpec& spec, std::mt19937_64& rng) {
  std::bernoulli_distribution d(0.7);
  std::vector<std::uint8_t> b(spec.num_voxels());
  for (auto& x : b) x = d(rng) ? 1 : 0;
  return VoxelMask(spec, std::move(b));
}

inline ProbGrid random_probs(const GridSpec& spec, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(0.0, 1.0);
  std::vector<double> p(spec.num_voxels() * spec.num_classes);
  for (std::size_t v = 0; v < spec.num_voxels(); ++v) {
    double sum = 0.0;
    for (std::size_t c = 0; c < spec.num_classes; ++c) sum += (p[v * spec.num_classes + c] = d(rng));
    for (std::size_t c = 0; c < spec.num_classes; ++c) p[v * spec.num_classes + c] /= sum;
  }
  return ProbGrid(spec, std::move(p));
}

inline SuiteResult gradients(const Options& opt, double& max_err) {
  const int seeds = opt.quick ? 1 : 3;
  head::GradCheckOptions gc;
  gc.backward.corrupt_dice_gradient = opt.corrupt_dice_gradient;
  max_err = 0.0;
  for (int s = 0; s < seeds; ++s) {
    const auto toy = head::make_toy_problem(static_cast<std::uint64_t>(s), head::HeadConfig{});
    const auto r = head::check_gradients(toy.queries, toy.labels, &toy.mask, toy.params, gc);
    max_err = std::max(max_err, r.max_rel_error);
  }
  std::ostringstream msg;
  msg << std::scientific << std::setprecision(3) << "max rel err " << max_err << " over "
      << seeds << " seed(s)";
  return {"gradients", max_err <= kGradientTolerance, msg.str()};
}

inline SuiteResult metrics_oracle(const Options& opt) {
  std::mt19937_64 rng(7);
  const int trials = opt.quick ? 20 : 200;
  const GridSpec spec = small_spec(4, 4, 2, 5);
  for (int t = 0; t < trials; ++t) {
    const auto pred = random_labels(spec, rng);
    const auto gt = random_labels(spec, rng);
    const auto mask = random_mask(spec, rng);
    const auto report = evaluate(pred, gt, mask);
    for (std::uint32_t c = 0; c + 1 < spec.num_classes; ++c) {
      std::set<std::size_t> p, g;
      for (std::size_t v = 0; v < spec.num_voxels(); ++v) {
        if (!mask[v]) continue;
        if (pred[v] == c) p.insert(v);
        if (gt[v] == c) g.insert(v);
      }
      std::set<std::size_t> uni = p;
      uni.insert(g.begin(), g.end());
      std::size_t inter = 0;
      for (auto v : p) inter += g.count(v);
      if (report.counts[c].intersection != static_cast<std::int64_t>(inter) ||
          report.counts[c].union_ != static_cast<std::int64_t>(uni.size())) {
        return {"metrics", false, "count mismatch on trial " + std::to_string(t)};
      }
    }
  }
  return {"metrics", true, std::to_string(trials) + " grids match set-counting oracle"};
}

inline SuiteResult ensemble_validity(const Options& opt) {
  std::mt19937_64 rng(11);
  const int trials = opt.quick ? 10 : 100;
  const GridSpec spec = small_spec(3, 3, 2, 6);
  double worst = 0.0;
  for (int t = 0; t < trials; ++t) {
    std::vector<ProbGrid> grids;
    for (int i = 0; i < 3; ++i) grids.push_back(random_probs(spec, rng));
    const auto out = weighted_average(grids, EnsembleWeights({1.0, 2.5, 0.5}));
    for (std::size_t v = 0; v < spec.num_voxels(); ++v) {
      double sum = 0.0;
      for (double x : out.distribution(v)) sum += x;
      worst = std::max(worst, std::abs(sum - 1.0));
    }
  }
  std::ostringstream msg;
  msg << "max normalization error " << std::scientific << std::setprecision(2) << worst;
  return {"ensemble", worst <= 1e-12, msg.str()};
}

inline SuiteResult det_containment(const Options& opt) {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> pos(-5.0, 5.0), ext(0.1, 4.0), yaw(-3.2, 3.2);
  const int trials = opt.quick ? 20 : 100;
  for (int t = 0; t < trials; ++t) {
    DetectionBox b{{pos(rng), pos(rng), pos(rng)}, {ext(rng), ext(rng), ext(rng)}, yaw(rng), 0, 1.0};
    for (const auto& p : box_to_points(b, 0.3)) {
      if (!point_in_box(p, b)) return {"det2occ", false, "lattice point outside its box"};
    }
  }
  return {"det2occ", true, std::to_string(trials) + " random boxes contain their lattices"};
}

inline SuiteResult io_roundtrip(const Options& opt) {
  std::mt19937_64 rng(17);
  const int trials = opt.quick ? 10 : 100;
  const GridSpec spec = small_spec(3, 2, 4, 7);
  for (int t = 0; t < trials; ++t) {
    const auto l = random_labels(spec, rng);
    const auto p = random_probs(spec, rng);
    const auto m = random_mask(spec, rng);
    const bool ok = std::get<LabelGrid>(io::decode_grid(io::encode(l))) == l &&
                    std::get<ProbGrid>(io::decode_grid(io::encode(p))) == p &&
                    std::get<VoxelMask>(io::decode_grid(io::encode(m))) == m;
    if (!ok) return {"io", false, "round-trip mismatch on trial " + std::to_string(t)};
  }
  return {"io", true, std::to_string(trials) + " grid round-trips"};
}

inline SuiteResult cutout_determinism(const Options&) {
  ImageSet<std::uint8_t> imgs(2, 8, 8, 3, std::vector<std::uint8_t>(2 * 8 * 8 * 3, 200));
  const CutoutSpec spec{2, 3, 3, 0.0, 42};
  const bool same = cutout(imgs, spec) == cutout(imgs, spec);
  const bool identity = cutout(imgs, CutoutSpec{0, 3, 3, 0.0, 42}) == imgs;
  return {"cutout", same && identity, "repeatable output, zero-hole identity"};
}

}  // namespace detail

inline Report run(const Options& opt = {}) {
  Report r;
  r.suites.push_back(detail::gradients(opt, r.max_gradient_error));
  r.suites.push_back(detail::metrics_oracle(opt));
  r.suites.push_back(detail::ensemble_validity(opt));
  r.suites.push_back(detail::det_containment(opt));
  r.suites.push_back(detail::io_roundtrip(opt));
  r.suites.push_back(detail::cutout_determinism(opt));
  return r;
}

inline void print(const Report& r, std::ostream& out) {
  out << "max gradient relative error: " << std::scientific << std::setprecision(3)
      << r.max_gradient_error << std::defaultfloat << "\n";
  for (const auto& s : r.suites) {
    out << (s.passed ? "PASS " : "FAIL ") << s.name << ": " << s.detail << "\n";
  }
}

}  // namespace occkit::selfcheck
