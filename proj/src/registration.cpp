#include "mvmm/registration.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mvmm/error.hpp"
#include "mvmm/parallel.hpp"

namespace mvmm {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

}  // namespace

AscentOutcome gradient_ascent_step(std::span<double> params, std::span<const double> grad,
                                   std::span<const double> scale, StepControl& ctrl,
                                   const std::function<double(std::span<const double>)>& ll_of,
                                   double ll_current) {
  if (params.size() != grad.size() || params.size() != scale.size())
    throw_validation("gradient_ascent_step: parameter, gradient and scale sizes differ");
  for (std::size_t j = 0; j < grad.size(); ++j)
    if (!std::isfinite(grad[j]))
      throw_numeric("gradient_ascent_step: non-finite gradient at parameter " +
                    std::to_string(j));

  AscentOutcome out;
  out.ll_before = ll_current;
  out.ll_after = ll_current;

  double norm2 = 0.0;
  for (std::size_t j = 0; j < grad.size(); ++j) {
    const double w = scale[j] * grad[j];
    norm2 += w * w;
  }
  if (norm2 == 0.0) {
    out.accepted = true;
    out.stationary = true;
    return out;
  }
  const double norm = std::sqrt(norm2);

  std::vector<double> proposal(params.size());
  while (out.halvings <= ctrl.max_halvings) {
    for (std::size_t j = 0; j < params.size(); ++j)
      proposal[j] = params[j] + ctrl.eta * scale[j] * (scale[j] * grad[j]) / norm;
    const double ll = ll_of(proposal);
    if (ll > ll_current) {
      std::copy(proposal.begin(), proposal.end(), params.begin());
      out.accepted = true;
      out.ll_after = ll;
      ctrl.eta = std::min(2.0 * ctrl.eta, ctrl.eta_max);
      return out;
    }
    ctrl.eta *= 0.5;
    ++out.halvings;
  }
  return out;
}

std::vector<std::vector<std::vector<std::size_t>>> slice_voxel_lists(
    const MultivariateImageSet& images) {
  const std::size_t V = images.common_space.voxel_count();
  std::vector<std::vector<std::vector<std::size_t>>> lists(
      static_cast<std::size_t>(images.n_images()));
  for (int i = 0; i < images.n_images(); ++i)
    lists[static_cast<std::size_t>(i)].resize(
        static_cast<std::size_t>(images.images[static_cast<std::size_t>(i)].dims[2]));
  // Attribution depends on z only; resolve once per common z-plane.
  const std::size_t plane = static_cast<std::size_t>(images.common_space.dims[0]) *
                            static_cast<std::size_t>(images.common_space.dims[1]);
  for (int z = 0; z < images.common_space.dims[2]; ++z) {
    const double wz = images.common_space.origin[2] + z * images.common_space.spacing[2];
    for (int i = 0; i < images.n_images(); ++i) {
      const int s = slice_of(images.images[static_cast<std::size_t>(i)], wz);
      if (s < 0) continue;
      auto& list = lists[static_cast<std::size_t>(i)][static_cast<std::size_t>(s)];
      const std::size_t base = static_cast<std::size_t>(z) * plane;
      for (std::size_t v = 0; v < plane; ++v) list.push_back(base + v);
    }
  }
  return lists;
}

namespace {

// Per-voxel log-likelihood term with image `override_image`'s factor taken
// from (value, inside) instead of the cache. override_image < 0 reads
// everything from the cache.
double voxel_ll_override(const ModelParams& params, const EvalCache& cache, std::size_t v,
                         int override_image, double override_value, bool override_inside) {
  const int K = params.config.n_labels();
  const int N = params.config.n_images();

  bool any = false;
  double value[32];
  bool covered[32];
  for (int i = 0; i < N; ++i) {
    if (i == override_image) {
      covered[i] = override_inside;
      value[i] = override_value;
    } else {
      covered[i] = cache.inside[static_cast<std::size_t>(i)][v] != 0;
      value[i] = cache.intensity[static_cast<std::size_t>(i)][v];
    }
    any = any || covered[i];
  }
  if (!any) return 0.0;

  const double* atlas_row = &cache.atlas_probs[v * static_cast<std::size_t>(K)];
  double prior[64];
  spatial_prior_row(params, atlas_row, prior);

  double m = kNegInf;
  double t[64];
  for (int k = 0; k < K; ++k) {
    if (!(prior[k] > 0.0)) {
      t[k] = kNegInf;
      continue;
    }
    double acc = std::log(prior[k]);
    for (int i = 0; i < N; ++i) {
      if (!covered[i]) continue;
      acc += eval_tissue_mixture(params, i, k, value[i]).log_pdf_eff;
    }
    t[k] = acc;
    m = std::max(m, acc);
  }
  if (m == kNegInf)
    throw_numeric("log-likelihood is undefined (zero inner sum) at voxel index " +
                  std::to_string(v));
  double s = 0.0;
  for (int k = 0; k < K; ++k)
    if (t[k] != kNegInf) s += std::exp(t[k] - m);
  return m + std::log(s);
}

}  // namespace

double slice_restricted_ll(const ModelParams& params, const MultivariateImageSet& images,
                           const EvalCache& cache, const std::vector<std::size_t>& voxels,
                           int image, int slice, SliceMode mode,
                           const SliceTransform* proposal) {
  const VoxelGrid& img = images.images[static_cast<std::size_t>(image)];
  const Vec3 center = slice_center(img, slice);
  double total = 0.0;
  for (const std::size_t v : voxels) {
    if (!proposal) {
      total += voxel_ll_override(params, cache, v, -1, 0.0, false);
      continue;
    }
    const Vec3 x = cache.common.voxel_center(v);
    const Vec3 y = proposal->is_identity(mode) ? x : apply_slice_params(mode, *proposal, x, center);
    const auto s = trilinear_sample(img, y);
    total += voxel_ll_override(params, cache, v, image, s ? *s : 0.0, s.has_value());
  }
  return total;
}

std::vector<double> ll_gradient_slice_affine(const ModelParams& params,
                                             const MultivariateImageSet& images,
                                             const TransformState& transforms,
                                             const EvalCache& cache,
                                             const std::vector<std::size_t>& voxels, int image,
                                             int slice, int workers) {
  const int K = params.config.n_labels();
  const int N = params.config.n_images();
  const SliceMode mode = transforms.slices.mode;
  const int P = param_count(mode);
  const VoxelGrid& img = images.images[static_cast<std::size_t>(image)];
  const Vec3 center = slice_center(img, slice);
  const SliceTransform& cur =
      transforms.slices.per_image[static_cast<std::size_t>(image)][static_cast<std::size_t>(slice)];

  const std::size_t n = voxels.size();
  const int chunks = std::max(1, chunk_count(n, workers));
  std::vector<std::vector<double>> partial(static_cast<std::size_t>(chunks),
                                           std::vector<double>(static_cast<std::size_t>(P), 0.0));

  parallel_chunks(n, workers, [&](std::size_t b, std::size_t e, int chunk) {
    auto& acc = partial[static_cast<std::size_t>(chunk)];
    double prior[64];
    double t[64];
    double dr[64];
    for (std::size_t idx = b; idx < e; ++idx) {
      const std::size_t v = voxels[idx];
      if (!cache.inside[static_cast<std::size_t>(image)][v]) continue;

      const Vec3 x = cache.common.voxel_center(v);
      const Vec3 y = apply_slice_params(mode, cur, x, center);
      const auto grad_i = image_gradient(img, y);
      if (!grad_i) continue;

      const double* atlas_row = &cache.atlas_probs[v * static_cast<std::size_t>(K)];
      spatial_prior_row(params, atlas_row, prior);

      const double value_i = cache.intensity[static_cast<std::size_t>(image)][v];
      double m = kNegInf;
      for (int k = 0; k < K; ++k) {
        if (!(prior[k] > 0.0)) {
          t[k] = kNegInf;
          dr[k] = 0.0;
          continue;
        }
        double acc_k = std::log(prior[k]);
        for (int i = 0; i < N; ++i) {
          if (!cache.inside[static_cast<std::size_t>(i)][v]) continue;
          const double vi = i == image ? value_i : cache.intensity[static_cast<std::size_t>(i)][v];
          const MixtureEval ev = eval_tissue_mixture(params, i, k, vi);
          acc_k += ev.log_pdf_eff;
          if (i == image) dr[k] = ev.dlog_dv;
        }
        t[k] = acc_k;
        m = std::max(m, acc_k);
      }
      if (m == kNegInf) continue;
      double s = 0.0;
      double weighted = 0.0;
      for (int k = 0; k < K; ++k) {
        if (t[k] == kNegInf) continue;
        const double w = std::exp(t[k] - m);
        s += w;
        weighted += w * dr[k];
      }
      const double dll_dv = weighted / s;
      for (int j = 0; j < P; ++j) {
        const Vec3 jac = slice_param_jacobian(mode, cur, x, center, j);
        acc[static_cast<std::size_t>(j)] +=
            dll_dv * ((*grad_i)[0] * jac[0] + (*grad_i)[1] * jac[1] + (*grad_i)[2] * jac[2]);
      }
    }
  });

  std::vector<double> grad(static_cast<std::size_t>(P), 0.0);
  for (const auto& p : partial)
    for (int j = 0; j < P; ++j) grad[static_cast<std::size_t>(j)] += p[static_cast<std::size_t>(j)];
  return grad;
}

std::vector<Vec3> ll_gradient_ffd(const ModelParams& params, const MultivariateImageSet& images,
                                  const AtlasPrior& atlas, const TransformState& transforms,
                                  const EvalCache& cache, int workers) {
  const FfdDeformation& ffd = transforms.ffd;
  ffd.validate("ll_gradient_ffd");
  if (ffd.phi.empty()) return {};

  const int K = params.config.n_labels();
  const int N = params.config.n_images();
  const std::size_t V = cache.n_voxels();
  const std::size_t C = ffd.control_count();

  const int chunks = std::max(1, chunk_count(V, workers));
  std::vector<std::vector<Vec3>> partial(static_cast<std::size_t>(chunks),
                                         std::vector<Vec3>(C, Vec3{0.0, 0.0, 0.0}));

  parallel_chunks(V, workers, [&](std::size_t b, std::size_t e, int chunk) {
    auto& acc = partial[static_cast<std::size_t>(chunk)];
    double lpdf[64];
    for (std::size_t v = b; v < e; ++v) {
      if (cache.partition.region_of[v] < 0) continue;  // prior sums to 1, term is constant

      const Vec3 x = cache.common.voxel_center(v);
      const Vec3 y = apply_ffd(ffd, x);

      const double* atlas_row = &cache.atlas_probs[v * static_cast<std::size_t>(K)];
      double nf = 0.0;
      for (int k = 0; k < K; ++k) nf += params.pi[static_cast<std::size_t>(k)] * atlas_row[k];
      if (!(nf > 0.0)) continue;

      // Per-label product of covering-image densities, max-shifted.
      double m2 = kNegInf;
      for (int k = 0; k < K; ++k) {
        double acc_k = 0.0;
        for (int i = 0; i < N; ++i) {
          if (!cache.inside[static_cast<std::size_t>(i)][v]) continue;
          acc_k += eval_tissue_mixture(params, i, k,
                                       cache.intensity[static_cast<std::size_t>(i)][v])
                       .log_pdf_eff;
        }
        lpdf[k] = acc_k;
        m2 = std::max(m2, acc_k);
      }

      double lh_t = 0.0;           // sum_k prior_k * exp(lpdf_k - m2)
      Vec3 term1{0.0, 0.0, 0.0};   // sum_k exp(lpdf_k - m2) * pi_k * grad A_k
      Vec3 v2{0.0, 0.0, 0.0};      // sum_l pi_l * grad A_l
      for (int k = 0; k < K; ++k) {
        const double pik = params.pi[static_cast<std::size_t>(k)];
        const double lt = std::exp(lpdf[k] - m2);
        lh_t += (pik * atlas_row[k] / nf) * lt;
        if (pik == 0.0) continue;
        const auto ga = image_gradient(atlas.maps[static_cast<std::size_t>(k)], y);
        if (!ga) continue;
        for (int a = 0; a < 3; ++a) {
          term1[a] += lt * pik * (*ga)[a];
          v2[a] += pik * (*ga)[a];
        }
      }
      if (!(lh_t > 0.0)) continue;

      Vec3 w;
      for (int a = 0; a < 3; ++a) w[a] = term1[a] / (nf * lh_t) - v2[a] / nf;
      if (w[0] == 0.0 && w[1] == 0.0 && w[2] == 0.0) continue;

      const FfdSupport sup = ffd_weights_at(ffd, x);
      for (int j = 0; j < 64; ++j) {
        Vec3& g = acc[static_cast<std::size_t>(sup.index[j])];
        g[0] += sup.weight[j] * w[0];
        g[1] += sup.weight[j] * w[1];
        g[2] += sup.weight[j] * w[2];
      }
    }
  });

  std::vector<Vec3> grad(C, Vec3{0.0, 0.0, 0.0});
  for (const auto& p : partial)
    for (std::size_t d = 0; d < C; ++d)
      for (int a = 0; a < 3; ++a) grad[d][a] += p[d][a];
  return grad;
}

}  // namespace mvmm
