#pragma once

#include <string>
#include <vector>

#include "mvmm/model.hpp"

namespace mvmm {

// Soft assignments: per-voxel label posteriors and, for covering images,
// per-component posteriors. Rows of voxels covered by no image are zero.
struct PosteriorField {
  int n_labels = 0;
  std::vector<double> label_post;              // [voxel * K + k]
  std::vector<std::vector<double>> comp_post;  // [image][voxel * KC_i + kc]

  std::size_t n_voxels() const {
    return n_labels == 0 ? 0 : label_post.size() / static_cast<std::size_t>(n_labels);
  }
};

// Atlas-weighted initialization: label proportions from atlas mass,
// per-tissue weighted moments, component means spread by evenly spaced
// offsets over [-1, 1] standard deviations, component variances split by
// component count.
ModelParams initialize_params(const MultivariateImageSet& images, const LabelConfig& config,
                              const EvalCache& cache);

PosteriorField e_step(const ModelParams& params, const EvalCache& cache, int workers = 1);

// Updates tau, mu, sigma2 from weighted moments over each image's covered
// voxels; starved components are re-seeded next to their heaviest sibling.
void m_step(ModelParams& params, const PosteriorField& posteriors, const EvalCache& cache,
            int workers = 1);

// Generalized-EM label proportion update with the normalizer frozen at the
// previous proportions.
void update_pi(ModelParams& params, const PosteriorField& posteriors, const EvalCache& cache,
               int workers = 1);

struct EmResult {
  ModelParams params;
  PosteriorField posteriors;       // E-step at the returned params
  std::vector<double> ll_trace;    // initial LL plus one entry per iteration
  bool converged = false;
};

EmResult em_iterate(const ModelParams& initial, const EvalCache& cache, int n_iters, double tol,
                    int workers = 1);

// Arg-max readout on the common lattice. Ties pick the lowest label id;
// voxels covered by no image fall back to the arg-max spatial prior.
LabelVolume hard_segmentation_common(const PosteriorField& posteriors, const ModelParams& params,
                                     const EvalCache& cache, const GridLayout& common);

// Nearest-neighbor resampling of the common-space labels into one image's
// native lattice through the inverse of its slice transforms.
LabelVolume resample_labels_to_image(const LabelVolume& common_labels, const VoxelGrid& image,
                                     const SliceAffineSet& slices, int image_index);

// Plain two-column text trace (iteration, LL).
void write_ll_trace(const std::string& path, const std::vector<double>& trace);

}  // namespace mvmm
