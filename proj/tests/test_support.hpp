#pragma once

// Shared builders for small deterministic test fixtures.

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "mvmm/model.hpp"
#include "mvmm/phantom.hpp"
#include "mvmm/transforms.hpp"
#include "mvmm/volume.hpp"

namespace mvmm_test {

using namespace mvmm;

inline VoxelGrid make_grid(Index3 dims, Vec3 spacing, Vec3 origin,
                           const std::function<double(Vec3)>& f) {
  VoxelGrid g = VoxelGrid::zeros(dims, spacing, origin);
  std::size_t v = 0;
  for (int z = 0; z < dims[2]; ++z)
    for (int y = 0; y < dims[1]; ++y)
      for (int x = 0; x < dims[0]; ++x, ++v) g.values[v] = f(g.voxel_center(x, y, z));
  return g;
}

inline VoxelGrid constant_grid(Index3 dims, Vec3 spacing, Vec3 origin, double value) {
  return make_grid(dims, spacing, origin, [value](Vec3) { return value; });
}

// Deterministic pseudo-random values in [lo, hi] keyed by voxel position.
inline VoxelGrid noise_grid(Index3 dims, Vec3 spacing, Vec3 origin, uint64_t seed, double lo,
                            double hi) {
  const CounterRng rng = CounterRng::derive(seed, 99);
  VoxelGrid g = VoxelGrid::zeros(dims, spacing, origin);
  for (std::size_t v = 0; v < g.values.size(); ++v)
    g.values[v] = lo + (hi - lo) * rng.uniform(v);
  return g;
}

// Uniform atlas over the given label ids on a lattice.
inline AtlasPrior uniform_atlas(const std::vector<int>& labels, const GridLayout& layout) {
  AtlasPrior atlas;
  atlas.labels = labels;
  const double p = 1.0 / static_cast<double>(labels.size());
  for (std::size_t k = 0; k < labels.size(); ++k) {
    VoxelGrid m = VoxelGrid::zeros(layout);
    std::fill(m.values.begin(), m.values.end(), p);
    atlas.maps.push_back(std::move(m));
  }
  return atlas;
}

// Single-component label config: one Gaussian per (image, label).
inline LabelConfig simple_config(int n_images, const std::vector<int>& labels) {
  LabelConfig c;
  c.labels = labels;
  c.n_components.assign(static_cast<std::size_t>(n_images),
                        std::vector<int>(labels.size(), 1));
  return c;
}

inline ModelParams simple_params(const LabelConfig& config, const std::vector<double>& pi,
                                 const std::vector<std::vector<double>>& mu,
                                 const std::vector<std::vector<double>>& sigma2) {
  ModelParams p;
  p.config = config;
  p.pi = pi;
  const int N = config.n_images();
  p.tau.resize(static_cast<std::size_t>(N));
  p.mu = mu;
  p.sigma2 = sigma2;
  p.sigma_floor.assign(static_cast<std::size_t>(N), 1e-12);
  for (int i = 0; i < N; ++i)
    p.tau[static_cast<std::size_t>(i)]
        .assign(static_cast<std::size_t>(config.kc_count(i)), 1.0);
  p.validate();
  return p;
}

}  // namespace mvmm_test
