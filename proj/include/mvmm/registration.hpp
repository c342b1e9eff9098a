#pragma once

#include <functional>
#include <span>
#include <vector>

#include "mvmm/model.hpp"

namespace mvmm {

// Persistent backtracking state for one parameter block. eta is a relative
// step multiplier: it is halved on rejected proposals (up to max_halvings
// per call), doubled after acceptance, and capped at eta_max.
struct StepControl {
  double eta = 1.0;
  double eta_max = 1.0;
  int max_halvings = 8;
};

struct AscentOutcome {
  bool accepted = false;
  bool stationary = false;
  double ll_before = 0.0;
  double ll_after = 0.0;
  int halvings = 0;
};

// One backtracking ascent proposal along the family-scaled gradient
// direction. scale[j] is the full-step size of parameter j in its own units
// (mm, rad, ...); a proposal moves at most ctrl.eta * scale[j] per
// parameter. Accepts only strict LL increases.
AscentOutcome gradient_ascent_step(std::span<double> params, std::span<const double> grad,
                                   std::span<const double> scale, StepControl& ctrl,
                                   const std::function<double(std::span<const double>)>& ll_of,
                                   double ll_current);

// Common-space voxels attributed to each (image, slice) by the z rule.
// Attribution depends only on the lattices, never on the transform values.
std::vector<std::vector<std::vector<std::size_t>>> slice_voxel_lists(
    const MultivariateImageSet& images);

// Log-likelihood restricted to the given voxels, with image `image`'s factor
// sampled under `proposal` for its slice (all other factors from the cache).
// Pass nullptr to evaluate at the cached transforms.
double slice_restricted_ll(const ModelParams& params, const MultivariateImageSet& images,
                           const EvalCache& cache, const std::vector<std::size_t>& voxels,
                           int image, int slice, SliceMode mode,
                           const SliceTransform* proposal);

// Analytic dLL/d(slice parameters) for one slice of one image.
std::vector<double> ll_gradient_slice_affine(const ModelParams& params,
                                             const MultivariateImageSet& images,
                                             const TransformState& transforms,
                                             const EvalCache& cache,
                                             const std::vector<std::size_t>& voxels, int image,
                                             int slice, int workers = 1);

// Analytic dLL/d(phi_d) for every FFD control point, x-fastest, as
// 3-vectors.
std::vector<Vec3> ll_gradient_ffd(const ModelParams& params, const MultivariateImageSet& images,
                                  const AtlasPrior& atlas, const TransformState& transforms,
                                  const EvalCache& cache, int workers = 1);

}  // namespace mvmm
