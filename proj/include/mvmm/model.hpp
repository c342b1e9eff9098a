#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mvmm/transforms.hpp"
#include "mvmm/volume.hpp"

namespace mvmm {

// Label set shared across images, with the per-image Gaussian component
// count of each tissue.
struct LabelConfig {
  std::vector<int> labels;                     // user-facing ids, ordered
  std::vector<std::vector<int>> n_components;  // [image][label index], >= 1

  int n_labels() const { return static_cast<int>(labels.size()); }
  int n_images() const { return static_cast<int>(n_components.size()); }
  int label_index(int label_id) const;  // -1 when unknown
  int components(int image, int label_idx) const;
  // Flattened (label, component) layout per image.
  int kc_count(int image) const;
  int kc_offset(int image, int label_idx) const;
  void validate() const;
};

// The full parameter vector theta: label proportions, component proportions,
// and per-component Gaussian moments, stored in the LabelConfig's flattened
// (label, component) layout per image.
struct ModelParams {
  LabelConfig config;
  std::vector<double> pi;                  // [K]
  std::vector<std::vector<double>> tau;    // [image][kc]
  std::vector<std::vector<double>> mu;     // [image][kc]
  std::vector<std::vector<double>> sigma2; // [image][kc]
  std::vector<double> sigma_floor;         // [image], variance units

  void validate() const;
};

void write_model_params(const ModelParams& params, const std::string& path);
ModelParams read_model_params(const std::string& path);

// Per-label prior probability maps, all on one lattice.
struct AtlasPrior {
  std::vector<int> labels;      // ids aligned with maps
  std::vector<VoxelGrid> maps;

  int n_labels() const { return static_cast<int>(maps.size()); }
  void validate() const;
};

struct MultivariateImageSet {
  std::vector<VoxelGrid> images;
  GridLayout common_space;

  int n_images() const { return static_cast<int>(images.size()); }
  void validate() const;
};

// Decomposition of the common lattice by covering-image set. region_of is -1
// for voxels inside no image.
struct CoveragePartition {
  std::vector<int32_t> region_of;
  std::vector<std::vector<int>> covering_images;  // per region, sorted

  int n_regions() const { return static_cast<int>(covering_images.size()); }
  std::size_t excluded_count() const;
  bool covers(int region, int image) const;
};

// Everything the likelihood needs at the current transforms, sampled once
// per common voxel: image intensities at G_{i,s}(x) with hull flags, and
// atlas probabilities at D(x) (uniform 1/K where D(x) leaves the atlas
// hull). The partition groups voxels by covering set.
struct EvalCache {
  GridLayout common;
  std::vector<std::vector<double>> intensity;  // [image][voxel]
  std::vector<std::vector<uint8_t>> inside;    // [image][voxel]
  std::vector<double> atlas_probs;             // [voxel * K + k]
  CoveragePartition partition;
  int n_labels = 0;

  std::size_t n_voxels() const { return common.voxel_count(); }
};

EvalCache build_eval_cache(const MultivariateImageSet& images, const AtlasPrior& atlas,
                           const TransformState& transforms, int workers = 1);

// Re-samples one image at the given voxels (after a slice transform moved).
void refresh_cache_image(EvalCache& cache, const MultivariateImageSet& images,
                         const TransformState& transforms, int image,
                         const std::vector<std::size_t>& voxels);

// Re-samples the atlas probabilities (after the FFD moved). The result can
// be staged into a caller-provided buffer for backtracking proposals.
void sample_atlas_probs(const MultivariateImageSet& images, const AtlasPrior& atlas,
                        const FfdDeformation& ffd, std::vector<double>& out, int workers = 1);

// Regroups the partition from the cache's inside flags.
void rebuild_partition(EvalCache& cache);

CoveragePartition build_coverage_partition(const MultivariateImageSet& images,
                                           const TransformState& transforms, int workers = 1);

// --- Point densities ------------------------------------------------------

double gaussian_pdf(double mu, double sigma2, double x);

// Multi-component Gaussian mixture density of tissue `label_idx` in image i.
double tissue_intensity_pdf(const ModelParams& params, int image, int label_idx,
                            double intensity);

// Product of per-image tissue densities over the images whose hull contains
// the transformed point; throws when no image covers x.
double label_conditional_pdf(const Vec3& x, int label_idx, const MultivariateImageSet& images,
                             const TransformState& transforms, const ModelParams& params);

// Normalized spatial prior pi_k * A_k(D(x)) / sum_l pi_l * A_l(D(x)); atlas
// values outside the hull fall back to uniform 1/K.
double spatial_prior(const Vec3& x, int label_idx, const ModelParams& params,
                     const AtlasPrior& atlas, const FfdDeformation& ffd);

// K atlas probabilities at D(x) with the uniform fallback applied.
std::vector<double> atlas_probs_at(const Vec3& x, const AtlasPrior& atlas,
                                   const FfdDeformation& ffd);

// Normalized prior over labels from a cached atlas row; writes K values.
void spatial_prior_row(const ModelParams& params, const double* atlas_row, double* prior_out);

// Log-space view of one tissue mixture: log(pdf + floor) and the damped
// derivative d/dv log(pdf + floor). The likelihood, the E-step and the
// slice-transform gradient all build on this one evaluation.
struct MixtureEval {
  double log_pdf_eff;
  double dlog_dv;
};
MixtureEval eval_tissue_mixture(const ModelParams& params, int image, int label_idx,
                                double value);

// --- Log-likelihood --------------------------------------------------------

// Floor applied to per-image mixture densities before taking logs.
inline constexpr double kDensityFloor = 1e-300;

// Per-voxel log p(I(x) | theta): logsumexp over labels of log prior plus the
// per-covering-image log mixture densities. Voxels covered by no image
// contribute exactly zero. Returns -inf only on a zero inner sum, which
// total_log_likelihood reports as a numeric error.
double voxel_log_likelihood(const ModelParams& params, const EvalCache& cache,
                            std::size_t voxel);

double total_log_likelihood(const ModelParams& params, const EvalCache& cache, int workers = 1);

// Full LL with a replacement atlas-probability table (FFD proposals stage
// their resampled priors here without touching the cache).
double total_ll_with_atlas(const ModelParams& params, const EvalCache& cache,
                           const std::vector<double>& atlas_probs, int workers = 1);

struct SubregionLL {
  std::vector<double> per_region;
  double total = 0.0;
};
// The same sum grouped by coverage sub-region.
SubregionLL ll_by_subregion(const ModelParams& params, const EvalCache& cache, int workers = 1);

}  // namespace mvmm
