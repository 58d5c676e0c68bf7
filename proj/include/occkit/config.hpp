#pragma once

// JSON run configuration. Every field is optional; omitted fields take the
// defaults shown by `RunConfig{}`.
//
// {
//   "spec":     {"dims": [200, 200, 16], "voxel_size": 0.4,
//                "origin": [-40, -40, -1], "num_classes": 18},
//   "ensemble": {"weights": [1, 1, 1], "strategy": "weighted"},
//   "det2occ":  {"thresholds": 0.3 | [..17 values..] | {"default": 0.3, "car": 0.5},
//                "spacing_t": 0.2},
//   "cutout":   {"num_holes": 1, "size": 0.25, "hole_h": 0, "hole_w": 0,
//                "fill": 0, "seed": 0},
//   "loss":     {"lambda_ce": 1, "lambda_dice": 1}
// }

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "occkit/det2occ.hpp"
#include "occkit/ensemble.hpp"
#include "occkit/error.hpp"
#include "occkit/grid.hpp"
#include "occkit/head/params.hpp"

namespace occkit::config {

using nlohmann::json;

inline json spec_to_json(const GridSpec& s) {
  return {{"dims", s.dims},
          {"voxel_size", s.voxel_size},
          {"origin", s.origin},
          {"num_classes", s.num_classes}};
}

inline GridSpec spec_from_json(const json& j) {
  GridSpec s;
  try {
    if (j.contains("dims")) s.dims = j.at("dims").get<std::array<std::uint32_t, 3>>();
    if (j.contains("voxel_size")) s.voxel_size = j.at("voxel_size").get<double>();
    if (j.contains("origin")) s.origin = j.at("origin").get<Vec3>();
    if (j.contains("num_classes")) s.num_classes = j.at("num_classes").get<std::uint32_t>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("invalid grid spec: ") + e.what());
  }
  s.validate();
  return s;
}

/// Threshold list from a number, an array of num_classes - 1 values, or an
/// object mapping class names (plus optional "default") to thresholds.
inline std::vector<double> thresholds_from_json(const json& j, std::uint32_t num_classes,
                                                double fallback = 0.3) {
  const std::size_t n = num_classes - 1;
  try {
    if (j.is_number()) return std::vector<double>(n, j.get<double>());
    if (j.is_array()) {
      auto v = j.get<std::vector<double>>();
      if (v.size() != n) {
        throw ValidationError("expected " + std::to_string(n) + " thresholds, got " +
                              std::to_string(v.size()));
      }
      return v;
    }
    if (j.is_object()) {
      const ClassTable table = ClassTable::for_classes(num_classes);
      std::vector<double> v(n, j.value("default", fallback));
      for (const auto& [name, value] : j.items()) {
        if (name == "default") continue;
        const auto idx = table.index_of(name);
        if (!idx || *idx >= n) throw ValidationError("unknown semantic class '" + name + "'");
        v[*idx] = value.get<double>();
      }
      return v;
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("invalid thresholds: ") + e.what());
  }
  throw ValidationError("thresholds must be a number, array or object");
}

struct CutoutSettings {
  std::size_t num_holes = 1;
  /// Hole size as a fraction of the image dims, used when hole_h/hole_w are 0.
  double size = 0.25;
  std::size_t hole_h = 0;
  std::size_t hole_w = 0;
  double fill = 0.0;
  std::uint64_t seed = 0;
};

struct RunConfig {
  GridSpec spec;
  /// Empty means uniform weights.
  std::vector<double> ensemble_weights;
  FusionStrategy strategy = FusionStrategy::kWeighted;
  std::vector<double> thresholds = std::vector<double>(17, 0.3);
  double spacing_t = 0.2;
  CutoutSettings cutout;
  head::LossWeights loss;

  ConversionConfig conversion() const { return {thresholds, spacing_t}; }

  void validate() const {
    spec.validate();
    if (!ensemble_weights.empty()) (void)EnsembleWeights(ensemble_weights);
    conversion().validate(spec.num_classes);
    loss.validate();
  }
};

inline RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  try {
    if (j.contains("spec")) c.spec = spec_from_json(j.at("spec"));
    c.thresholds.assign(c.spec.num_semantic(), 0.3);
    if (j.contains("ensemble")) {
      const auto& e = j.at("ensemble");
      if (e.contains("weights")) c.ensemble_weights = e.at("weights").get<std::vector<double>>();
      if (e.contains("strategy")) c.strategy = parse_strategy(e.at("strategy").get<std::string>());
    }
    if (j.contains("det2occ")) {
      const auto& d = j.at("det2occ");
      if (d.contains("thresholds")) c.thresholds = thresholds_from_json(d.at("thresholds"), c.spec.num_classes);
      if (d.contains("spacing_t")) c.spacing_t = d.at("spacing_t").get<double>();
    }
    if (j.contains("cutout")) {
      const auto& k = j.at("cutout");
      c.cutout.num_holes = k.value("num_holes", c.cutout.num_holes);
      c.cutout.size = k.value("size", c.cutout.size);
      c.cutout.hole_h = k.value("hole_h", c.cutout.hole_h);
      c.cutout.hole_w = k.value("hole_w", c.cutout.hole_w);
      c.cutout.fill = k.value("fill", c.cutout.fill);
      c.cutout.seed = k.value("seed", c.cutout.seed);
    }
    if (j.contains("loss")) {
      const auto& l = j.at("loss");
      c.loss.ce = l.value("lambda_ce", c.loss.ce);
      c.loss.dice = l.value("lambda_dice", c.loss.dice);
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("invalid run config: ") + e.what());
  }
  c.validate();
  return c;
}

inline json run_config_to_json(const RunConfig& c) {
  return {{"spec", spec_to_json(c.spec)},
          {"ensemble", {{"weights", c.ensemble_weights}, {"strategy", to_string(c.strategy)}}},
          {"det2occ", {{"thresholds", c.thresholds}, {"spacing_t", c.spacing_t}}},
          {"cutout",
           {{"num_holes", c.cutout.num_holes},
            {"size", c.cutout.size},
            {"hole_h", c.cutout.hole_h},
            {"hole_w", c.cutout.hole_w},
            {"fill", c.cutout.fill},
            {"seed", c.cutout.seed}}},
          {"loss", {{"lambda_ce", c.loss.ce}, {"lambda_dice", c.loss.dice}}}};
}

inline json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

inline RunConfig read_run_config(const std::filesystem::path& path) {
  return run_config_from_json(read_json(path));
}

}  // namespace occkit::config
