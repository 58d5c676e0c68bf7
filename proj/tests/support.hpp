#pragma once

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "occkit/grid.hpp"

namespace testing_support {

using namespace occkit;

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

inline VoxelMask random_mask(const GridSpec& spec, std::mt19937_64& rng, double p = 0.7) {
  std::bernoulli_distribution d(p);
  std::vector<std::uint8_t> b(spec.num_voxels());
  for (auto& x : b) x = d(rng) ? 1 : 0;
  return VoxelMask(spec, std::move(b));
}

inline ProbGrid random_probs(const GridSpec& spec, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(0.0, 1.0);
  const std::size_t k = spec.num_classes;
  std::vector<double> p(spec.num_voxels() * k);
  for (std::size_t v = 0; v < spec.num_voxels(); ++v) {
    double sum = 0.0;
    for (std::size_t c = 0; c < k; ++c) sum += (p[v * k + c] = d(rng));
    for (std::size_t c = 0; c < k; ++c) p[v * k + c] /= sum;
  }
  return ProbGrid(spec, std::move(p));
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "occkit-test-XXXXXX").string();
    if (!mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
    path_ = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace testing_support
