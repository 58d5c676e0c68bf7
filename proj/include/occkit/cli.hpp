#pragma once

// The `occkit` command line: eval, ensemble, det2occ, cutout, selfcheck.
//
// Exit codes: 0 success, 1 a check failed, 2 usage, format, IO or
// validation error. Output files are only written once a command has fully
// succeeded, and always through a rename.

#include <algorithm>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "occkit/augment.hpp"
#include "occkit/config.hpp"
#include "occkit/det2occ.hpp"
#include "occkit/ensemble.hpp"
#include "occkit/error.hpp"
#include "occkit/io.hpp"
#include "occkit/metrics.hpp"
#include "occkit/selfcheck.hpp"
#include "occkit/version.hpp"

namespace occkit::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitCheckFailed = 1;
inline constexpr int kExitError = 2;

namespace fs = std::filesystem;

struct EvalArgs {
  fs::path pred, gt;
  std::optional<fs::path> mask;
  std::optional<fs::path> report;
  bool strict_zero = false;
};

struct EnsembleArgs {
  std::vector<fs::path> inputs;
  std::vector<double> weights;
  std::optional<std::string> strategy;
  std::optional<fs::path> boxes;
  std::optional<double> spacing_t;
  std::optional<fs::path> thresholds;
  std::optional<fs::path> config;
  fs::path output;
};

struct Det2OccArgs {
  fs::path boxes;
  std::optional<std::string> spec;
  std::optional<double> spacing_t;
  std::optional<fs::path> thresholds;
  std::optional<fs::path> config;
  fs::path output;
};

struct CutoutArgs {
  fs::path input;
  std::optional<std::size_t> holes;
  std::optional<double> size;
  std::optional<std::size_t> hole_h, hole_w;
  std::optional<std::uint64_t> seed;
  std::optional<double> fill;
  std::optional<fs::path> config;
  fs::path output;
};

namespace detail {

inline config::RunConfig load_config(const std::optional<fs::path>& path) {
  return path ? config::read_run_config(*path) : config::RunConfig{};
}

inline GridSpec resolve_spec(const std::optional<std::string>& arg, const GridSpec& fallback) {
  if (!arg) return fallback;
  if (*arg == "default") return GridSpec::challenge();
  return config::spec_from_json(config::read_json(*arg));
}

inline ConversionConfig conversion(const config::RunConfig& cfg, const GridSpec& spec,
                                   const std::optional<fs::path>& thresholds,
                                   const std::optional<double>& spacing_t) {
  ConversionConfig conv = cfg.conversion();
  if (conv.thresholds.size() + 1 != spec.num_classes) conv.thresholds.assign(spec.num_semantic(), 0.3);
  if (thresholds) conv.thresholds = config::thresholds_from_json(config::read_json(*thresholds), spec.num_classes);
  if (spacing_t) conv.spacing_t = *spacing_t;
  conv.validate(spec.num_classes);
  return conv;
}

}  // namespace detail

inline int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const io::AnyGrid pred = io::read_grid(a.pred);
  const LabelGrid gt = io::read_labels(a.gt);
  const VoxelMask mask = a.mask ? io::read_mask(*a.mask) : VoxelMask::full(gt.spec());
  const EvalOptions opts{a.strict_zero};

  IoUReport report;
  if (const auto* p = std::get_if<ProbGrid>(&pred)) {
    report = evaluate_prob(*p, gt, mask, opts);
  } else if (const auto* l = std::get_if<LabelGrid>(&pred)) {
    report = evaluate(*l, gt, mask, opts);
  } else {
    throw ValidationError("'" + a.pred.string() + "' holds a mask, not a prediction");
  }

  if (a.report) {
    const auto table = ClassTable::for_classes(gt.spec().num_classes);
    io::write_text_atomic(*a.report, io::report_to_json(report, table).dump(2) + "\n");
  }
  if (report.miou) {
    out << "mIoU: " << std::fixed << std::setprecision(4) << *report.miou << std::defaultfloat << "\n";
  } else {
    out << "mIoU: undefined\n";
  }
  return kExitOk;
}

inline int cmd_pipeline_ensemble(const EnsembleArgs& a, std::ostream& out) {
  const config::RunConfig cfg = detail::load_config(a.config);
  const FusionStrategy strategy = a.strategy ? parse_strategy(*a.strategy) : cfg.strategy;

  std::vector<ProbGrid> grids;
  grids.reserve(a.inputs.size() + (a.boxes ? 1 : 0));
  for (const auto& p : a.inputs) grids.push_back(io::read_probs(p));
  if (grids.empty()) throw ValidationError("ensemble needs at least one input");
  if (a.boxes) {
    const GridSpec& spec = grids.front().spec();
    const auto boxes = io::read_boxes(*a.boxes, spec.num_classes);
    grids.push_back(boxes_to_probgrid(boxes, spec, detail::conversion(cfg, spec, a.thresholds, a.spacing_t)));
  }

  std::vector<double> w = a.weights.empty() ? cfg.ensemble_weights : a.weights;
  if (w.empty()) w.assign(grids.size(), 1.0);
  if (w.size() != grids.size()) {
    throw ValidationError("got " + std::to_string(w.size()) + " weights for " +
                          std::to_string(grids.size()) + " models" +
                          (a.boxes ? " (the detection grid takes the last weight)" : ""));
  }
  const EnsembleWeights weights(std::move(w));

  io::Bytes bytes;
  switch (strategy) {
    case FusionStrategy::kWeighted: bytes = io::encode(weighted_average(grids, weights)); break;
    case FusionStrategy::kMaxProb: bytes = io::encode(max_prob_fuse(grids)); break;
    case FusionStrategy::kVote: bytes = io::encode(vote_fuse(grids)); break;
  }
  grids.clear();
  io::write_file_atomic(a.output, bytes);
  out << "fused " << (a.inputs.size() + (a.boxes ? 1 : 0)) << " grids (" << to_string(strategy)
      << ") -> " << a.output.string() << "\n";
  return kExitOk;
}

inline int cmd_det2occ(const Det2OccArgs& a, std::ostream& out) {
  const config::RunConfig cfg = detail::load_config(a.config);
  const GridSpec spec = detail::resolve_spec(a.spec, cfg.spec);
  const ConversionConfig conv = detail::conversion(cfg, spec, a.thresholds, a.spacing_t);
  const auto boxes = io::read_boxes(a.boxes, spec.num_classes);
  const ProbGrid grid = boxes_to_probgrid(boxes, spec, conv);
  io::write_grid(a.output, grid);
  out << "converted " << filter_boxes(boxes, conv).size() << " of " << boxes.size()
      << " boxes -> " << a.output.string() << "\n";
  return kExitOk;
}

inline int cmd_cutout(const CutoutArgs& a, std::ostream& out) {
  const config::RunConfig cfg = detail::load_config(a.config);
  const auto imgs = io::read_images(a.input);
  const std::size_t holes = a.holes.value_or(cfg.cutout.num_holes);
  const std::uint64_t seed = a.seed.value_or(cfg.cutout.seed);
  CutoutSpec spec = CutoutSpec::relative(imgs.h, imgs.w, a.size.value_or(cfg.cutout.size), holes, seed);
  const std::size_t hh = a.hole_h.value_or(cfg.cutout.hole_h);
  const std::size_t hw = a.hole_w.value_or(cfg.cutout.hole_w);
  if (hh > 0) spec.hole_h = hh;
  if (hw > 0) spec.hole_w = hw;
  spec.fill = a.fill.value_or(cfg.cutout.fill);
  if (!(spec.fill >= 0.0 && spec.fill <= 255.0)) throw ValidationError("fill must lie in [0, 255]");
  io::write_images(a.output, cutout(imgs, spec));
  out << "applied " << holes << " hole(s) of " << spec.hole_h << "x" << spec.hole_w << " to "
      << imgs.n << " image(s) -> " << a.output.string() << "\n";
  return kExitOk;
}

inline int cmd_selfcheck(const selfcheck::Options& opts, std::ostream& out) {
  const auto report = selfcheck::run(opts);
  selfcheck::print(report, out);
  out << (report.passed() ? "selfcheck passed" : "selfcheck FAILED") << "\n";
  return report.passed() ? kExitOk : kExitCheckFailed;
}

/// Runs the command line given as argv[1..] and returns the exit code.
inline int run(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Occupancy evaluation, ensembling and augmentation toolkit", "occkit"};
  app.set_version_flag("--version", version_string());
  app.require_subcommand(1);

  std::function<int()> action;

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "Masked per-class IoU and mIoU");
  eval->add_option("--pred", ev.pred, "Predicted label or probability grid")->required();
  eval->add_option("--gt", ev.gt, "Ground-truth label grid")->required();
  eval->add_option("--mask", ev.mask, "Visibility mask (default: all voxels)");
  eval->add_option("--report", ev.report, "Write a JSON report");
  eval->add_flag("--strict-zero", ev.strict_zero, "Score classes absent from both grids as 0");
  eval->callback([&] { action = [&] { return cmd_eval(ev, out); }; });

  EnsembleArgs en;
  auto* ens = app.add_subcommand("ensemble", "Fuse probability grids");
  ens->add_option("--inputs", en.inputs, "Probability grids")->required();
  ens->add_option("--weights", en.weights, "One positive weight per model");
  ens->add_option("--strategy", en.strategy, "weighted, max or vote");
  ens->add_option("--boxes", en.boxes, "Detection boxes fused as an extra model");
  ens->add_option("--t", en.spacing_t, "Box lattice spacing in meters");
  ens->add_option("--thresholds", en.thresholds, "Per-class score thresholds (JSON)");
  ens->add_option("--config", en.config, "Run configuration (JSON)");
  ens->add_option("--output", en.output, "Output grid")->required();
  ens->callback([&] { action = [&] { return cmd_pipeline_ensemble(en, out); }; });

  Det2OccArgs dt;
  auto* det = app.add_subcommand("det2occ", "Voxelize detection boxes into a probability grid");
  det->add_option("--boxes", dt.boxes, "Box file")->required();
  det->add_option("--spec", dt.spec, "'default' or a grid spec JSON file");
  det->add_option("--t", dt.spacing_t, "Box lattice spacing in meters");
  det->add_option("--thresholds", dt.thresholds, "Per-class score thresholds (JSON)");
  det->add_option("--config", dt.config, "Run configuration (JSON)");
  det->add_option("--output", dt.output, "Output grid")->required();
  det->callback([&] { action = [&] { return cmd_det2occ(dt, out); }; });

  CutoutArgs ca;
  auto* cut = app.add_subcommand("cutout", "Random rectangular cutout on an image set");
  cut->add_option("--input", ca.input, "Image set")->required();
  cut->add_option("--holes", ca.holes, "Holes per image");
  cut->add_option("--size", ca.size, "Hole size as a fraction of the image");
  cut->add_option("--hole-h", ca.hole_h, "Hole height in pixels (overrides --size)");
  cut->add_option("--hole-w", ca.hole_w, "Hole width in pixels (overrides --size)");
  cut->add_option("--seed", ca.seed, "Random seed");
  cut->add_option("--fill", ca.fill, "Fill value");
  cut->add_option("--config", ca.config, "Run configuration (JSON)");
  cut->add_option("--output", ca.output, "Output image set")->required();
  cut->callback([&] { action = [&] { return cmd_cutout(ca, out); }; });

  selfcheck::Options sc;
  std::string fault;
  auto* self = app.add_subcommand("selfcheck", "Run the built-in verification suites");
  self->add_flag("--quick", sc.quick, "Reduced trial counts");
  self->add_option("--inject-fault", fault)->group("")->check(CLI::IsMember({"dice"}));
  self->callback([&] {
    sc.corrupt_dice_gradient = fault == "dice";
    action = [&] { return cmd_selfcheck(sc, out); };
  });

  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitError;
  }

  try {
    return action();
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitError;
  }
}

}  // namespace occkit::cli
