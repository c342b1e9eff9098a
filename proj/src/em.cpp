#include "mvmm/em.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "mvmm/config.hpp"
#include "mvmm/error.hpp"
#include "mvmm/parallel.hpp"

namespace mvmm {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kLogTwoPi = 1.8378770664093454836;

double image_value_range(const VoxelGrid& img) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const double v : img.values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  return hi - lo;
}

// Evenly spaced offsets over [-1, 1]: {0} for one component, {-1, +1} for
// two, and so on.
std::vector<double> component_offsets(int n) {
  std::vector<double> a(static_cast<std::size_t>(n), 0.0);
  if (n >= 2)
    for (int c = 0; c < n; ++c)
      a[static_cast<std::size_t>(c)] = -1.0 + 2.0 * c / (n - 1);
  return a;
}

}  // namespace

ModelParams initialize_params(const MultivariateImageSet& images, const LabelConfig& config,
                              const EvalCache& cache) {
  config.validate();
  if (config.n_images() != images.n_images())
    throw_validation("initialize_params: label config image count does not match image set");
  if (config.n_labels() != cache.n_labels)
    throw_validation("initialize_params: label config does not match atlas label count");

  const std::size_t V = cache.n_voxels();
  const int K = config.n_labels();
  const int N = config.n_images();

  ModelParams p;
  p.config = config;
  p.pi.assign(static_cast<std::size_t>(K), 0.0);
  p.sigma_floor.assign(static_cast<std::size_t>(N), 0.0);
  for (int i = 0; i < N; ++i) {
    const double range = image_value_range(images.images[static_cast<std::size_t>(i)]);
    const double floor = 1e-4 * range;
    p.sigma_floor[static_cast<std::size_t>(i)] = range > 0.0 ? floor * floor : 1e-12;
  }

  // Label proportions from atlas mass over the covered common space.
  std::vector<double> mass(static_cast<std::size_t>(K), 0.0);
  for (std::size_t v = 0; v < V; ++v) {
    if (cache.partition.region_of[v] < 0) continue;
    const double* row = &cache.atlas_probs[v * static_cast<std::size_t>(K)];
    for (int k = 0; k < K; ++k) mass[static_cast<std::size_t>(k)] += row[k];
  }
  double mass_total = 0.0;
  for (int k = 0; k < K; ++k) {
    if (!(mass[static_cast<std::size_t>(k)] > 0.0))
      throw_validation("initialize_params: atlas has zero total mass for label " +
                       std::to_string(config.labels[static_cast<std::size_t>(k)]));
    mass_total += mass[static_cast<std::size_t>(k)];
  }
  for (int k = 0; k < K; ++k)
    p.pi[static_cast<std::size_t>(k)] = mass[static_cast<std::size_t>(k)] / mass_total;

  p.tau.resize(static_cast<std::size_t>(N));
  p.mu.resize(static_cast<std::size_t>(N));
  p.sigma2.resize(static_cast<std::size_t>(N));
  for (int i = 0; i < N; ++i) {
    const auto kc = static_cast<std::size_t>(config.kc_count(i));
    p.tau[static_cast<std::size_t>(i)].assign(kc, 0.0);
    p.mu[static_cast<std::size_t>(i)].assign(kc, 0.0);
    p.sigma2[static_cast<std::size_t>(i)].assign(kc, 0.0);

    const auto& vals = cache.intensity[static_cast<std::size_t>(i)];
    const auto& ins = cache.inside[static_cast<std::size_t>(i)];
    for (int k = 0; k < K; ++k) {
      double w = 0.0, wv = 0.0;
      for (std::size_t v = 0; v < V; ++v) {
        if (!ins[v]) continue;
        const double a = cache.atlas_probs[v * static_cast<std::size_t>(K) + k];
        w += a;
        wv += a * vals[v];
      }
      if (!(w > 0.0))
        throw_validation("initialize_params: atlas mass for label " +
                         std::to_string(config.labels[static_cast<std::size_t>(k)]) +
                         " vanishes over the coverage of image " + std::to_string(i));
      const double mean = wv / w;
      double wvar = 0.0;
      for (std::size_t v = 0; v < V; ++v) {
        if (!ins[v]) continue;
        const double a = cache.atlas_probs[v * static_cast<std::size_t>(K) + k];
        const double d = vals[v] - mean;
        wvar += a * d * d;
      }
      const double var = wvar / w;
      const double sd = std::sqrt(var);

      const int nc = config.components(i, k);
      const int off = config.kc_offset(i, k);
      const auto offsets = component_offsets(nc);
      for (int c = 0; c < nc; ++c) {
        const auto idx = static_cast<std::size_t>(off + c);
        p.tau[static_cast<std::size_t>(i)][idx] = 1.0 / nc;
        p.mu[static_cast<std::size_t>(i)][idx] = mean + offsets[static_cast<std::size_t>(c)] * sd;
        p.sigma2[static_cast<std::size_t>(i)][idx] =
            std::max(var / nc, p.sigma_floor[static_cast<std::size_t>(i)]);
      }
    }
  }
  p.validate();
  return p;
}

PosteriorField e_step(const ModelParams& params, const EvalCache& cache, int workers) {
  const std::size_t V = cache.n_voxels();
  const int K = params.config.n_labels();
  const int N = params.config.n_images();

  PosteriorField post;
  post.n_labels = K;
  post.label_post.assign(V * static_cast<std::size_t>(K), 0.0);
  post.comp_post.resize(static_cast<std::size_t>(N));
  for (int i = 0; i < N; ++i)
    post.comp_post[static_cast<std::size_t>(i)]
        .assign(V * static_cast<std::size_t>(params.config.kc_count(i)), 0.0);

  const int chunks = std::max(1, chunk_count(V, workers));
  std::vector<int64_t> bad_voxel(static_cast<std::size_t>(chunks), -1);

  parallel_chunks(V, workers, [&](std::size_t b, std::size_t e, int chunk) {
    std::vector<double> t(static_cast<std::size_t>(K));
    std::vector<double> prior(static_cast<std::size_t>(K));
    for (std::size_t v = b; v < e; ++v) {
      if (cache.partition.region_of[v] < 0) continue;
      const double* atlas_row = &cache.atlas_probs[v * static_cast<std::size_t>(K)];
      spatial_prior_row(params, atlas_row, prior.data());

      double m = kNegInf;
      for (int k = 0; k < K; ++k) {
        if (!(prior[static_cast<std::size_t>(k)] > 0.0)) {
          t[static_cast<std::size_t>(k)] = kNegInf;
          continue;
        }
        double acc = std::log(prior[static_cast<std::size_t>(k)]);
        for (int i = 0; i < N; ++i) {
          if (!cache.inside[static_cast<std::size_t>(i)][v]) continue;
          acc += eval_tissue_mixture(params, i, k,
                                     cache.intensity[static_cast<std::size_t>(i)][v])
                     .log_pdf_eff;
        }
        t[static_cast<std::size_t>(k)] = acc;
        m = std::max(m, acc);
      }
      if (m == kNegInf) {
        if (bad_voxel[static_cast<std::size_t>(chunk)] < 0)
          bad_voxel[static_cast<std::size_t>(chunk)] = static_cast<int64_t>(v);
        continue;
      }
      double s = 0.0;
      for (int k = 0; k < K; ++k) {
        const double tk = t[static_cast<std::size_t>(k)];
        const double w = tk == kNegInf ? 0.0 : std::exp(tk - m);
        post.label_post[v * static_cast<std::size_t>(K) + k] = w;
        s += w;
      }
      for (int k = 0; k < K; ++k)
        post.label_post[v * static_cast<std::size_t>(K) + k] /= s;

      // Component posteriors: split P_kx by each covering image's component
      // responsibilities tau * phi / pdf; when the whole mixture underflows
      // the split falls back to the proportions themselves.
      for (int i = 0; i < N; ++i) {
        if (!cache.inside[static_cast<std::size_t>(i)][v]) continue;
        const double value = cache.intensity[static_cast<std::size_t>(i)][v];
        const auto kc_total = static_cast<std::size_t>(params.config.kc_count(i));
        double* crow = &post.comp_post[static_cast<std::size_t>(i)][v * kc_total];
        const auto& tau = params.tau[static_cast<std::size_t>(i)];
        const auto& mu = params.mu[static_cast<std::size_t>(i)];
        const auto& s2 = params.sigma2[static_cast<std::size_t>(i)];
        for (int k = 0; k < K; ++k) {
          const double pk = post.label_post[v * static_cast<std::size_t>(K) + k];
          const int off = params.config.kc_offset(i, k);
          const int nc = params.config.components(i, k);
          double lw[32];
          double mmax = kNegInf;
          for (int c = 0; c < nc; ++c) {
            const auto idx = static_cast<std::size_t>(off + c);
            const double d = value - mu[idx];
            const double lphi = -0.5 * (kLogTwoPi + std::log(s2[idx])) - 0.5 * d * d / s2[idx];
            lw[c] = tau[idx] > 0.0 ? std::log(tau[idx]) + lphi : kNegInf;
            mmax = std::max(mmax, lw[c]);
          }
          if (mmax == kNegInf) {
            for (int c = 0; c < nc; ++c)
              crow[off + c] = pk * tau[static_cast<std::size_t>(off + c)];
            continue;
          }
          double denom = 0.0;
          for (int c = 0; c < nc; ++c)
            denom += lw[c] == kNegInf ? 0.0 : std::exp(lw[c] - mmax);
          for (int c = 0; c < nc; ++c)
            crow[off + c] =
                lw[c] == kNegInf ? 0.0 : pk * std::exp(lw[c] - mmax) / denom;
        }
      }
    }
  });

  for (const int64_t bad : bad_voxel)
    if (bad >= 0)
      throw_numeric("e_step: zero total responsibility at voxel index " + std::to_string(bad));
  return post;
}

void m_step(ModelParams& params, const PosteriorField& posteriors, const EvalCache& cache,
            int workers) {
  const std::size_t V = cache.n_voxels();
  const int N = params.config.n_images();

  for (int i = 0; i < N; ++i) {
    const auto kc_total = static_cast<std::size_t>(params.config.kc_count(i));
    const auto& vals = cache.intensity[static_cast<std::size_t>(i)];
    const auto& ins = cache.inside[static_cast<std::size_t>(i)];
    const auto& crow = posteriors.comp_post[static_cast<std::size_t>(i)];

    const int chunks = std::max(1, chunk_count(V, workers));
    std::vector<std::vector<double>> s0(static_cast<std::size_t>(chunks),
                                        std::vector<double>(kc_total, 0.0));
    std::vector<std::vector<double>> s1 = s0, s2 = s0;
    parallel_chunks(V, workers, [&](std::size_t b, std::size_t e, int chunk) {
      auto& a0 = s0[static_cast<std::size_t>(chunk)];
      auto& a1 = s1[static_cast<std::size_t>(chunk)];
      auto& a2 = s2[static_cast<std::size_t>(chunk)];
      for (std::size_t v = b; v < e; ++v) {
        if (!ins[v]) continue;
        const double value = vals[v];
        const double* row = &crow[v * kc_total];
        for (std::size_t j = 0; j < kc_total; ++j) {
          const double w = row[j];
          a0[j] += w;
          a1[j] += w * value;
          a2[j] += w * value * value;
        }
      }
    });
    std::vector<double> m0(kc_total, 0.0), m1(kc_total, 0.0), m2(kc_total, 0.0);
    for (int c = 0; c < chunks; ++c)
      for (std::size_t j = 0; j < kc_total; ++j) {
        m0[j] += s0[static_cast<std::size_t>(c)][j];
        m1[j] += s1[static_cast<std::size_t>(c)][j];
        m2[j] += s2[static_cast<std::size_t>(c)][j];
      }

    const double floor = params.sigma_floor[static_cast<std::size_t>(i)];
    for (int k = 0; k < params.config.n_labels(); ++k) {
      const int off = params.config.kc_offset(i, k);
      const int nc = params.config.components(i, k);
      double label_mass = 0.0;
      for (int c = 0; c < nc; ++c) label_mass += m0[static_cast<std::size_t>(off + c)];
      if (!(label_mass > 0.0)) {
        // No responsibility mass anywhere for this tissue in this image
        // (e.g. fully truncated coverage): keep the previous parameters.
        continue;
      }
      // First pass: components with mass get plain weighted moments.
      int heaviest = -1;
      double heaviest_mass = -1.0;
      for (int c = 0; c < nc; ++c) {
        const auto j = static_cast<std::size_t>(off + c);
        if (m0[j] > heaviest_mass) {
          heaviest_mass = m0[j];
          heaviest = c;
        }
        if (m0[j] > 0.0) {
          const double mean = m1[j] / m0[j];
          params.mu[static_cast<std::size_t>(i)][j] = mean;
          params.sigma2[static_cast<std::size_t>(i)][j] =
              std::max(m2[j] / m0[j] - mean * mean, floor);
        }
      }
      // Starved components are re-seeded one sigma away from the heaviest
      // sibling, with a small share of the proportion mass.
      double tau_extra = 0.0;
      for (int c = 0; c < nc; ++c) {
        const auto j = static_cast<std::size_t>(off + c);
        if (m0[j] > 0.0) continue;
        const auto h = static_cast<std::size_t>(off + heaviest);
        params.mu[static_cast<std::size_t>(i)][j] =
            params.mu[static_cast<std::size_t>(i)][h] +
            std::sqrt(params.sigma2[static_cast<std::size_t>(i)][h]);
        params.sigma2[static_cast<std::size_t>(i)][j] =
            params.sigma2[static_cast<std::size_t>(i)][h];
        tau_extra += 1.0;
      }
      const double seed_share = 0.01;
      for (int c = 0; c < nc; ++c) {
        const auto j = static_cast<std::size_t>(off + c);
        if (m0[j] > 0.0)
          params.tau[static_cast<std::size_t>(i)][j] =
              (1.0 - seed_share * tau_extra) * (m0[j] / label_mass);
        else
          params.tau[static_cast<std::size_t>(i)][j] = seed_share;
      }
    }
  }
}

void update_pi(ModelParams& params, const PosteriorField& posteriors, const EvalCache& cache,
               int workers) {
  const std::size_t V = cache.n_voxels();
  const int K = params.config.n_labels();

  const int chunks = std::max(1, chunk_count(V, workers));
  std::vector<std::vector<double>> num(static_cast<std::size_t>(chunks),
                                       std::vector<double>(static_cast<std::size_t>(K), 0.0));
  std::vector<std::vector<double>> den = num;
  parallel_chunks(V, workers, [&](std::size_t b, std::size_t e, int chunk) {
    auto& n = num[static_cast<std::size_t>(chunk)];
    auto& d = den[static_cast<std::size_t>(chunk)];
    for (std::size_t v = b; v < e; ++v) {
      if (cache.partition.region_of[v] < 0) continue;
      const double* row = &cache.atlas_probs[v * static_cast<std::size_t>(K)];
      double cx = 0.0;
      for (int k = 0; k < K; ++k) cx += row[k] * params.pi[static_cast<std::size_t>(k)];
      for (int k = 0; k < K; ++k) {
        n[static_cast<std::size_t>(k)] += posteriors.label_post[v * static_cast<std::size_t>(K) + k];
        d[static_cast<std::size_t>(k)] += row[k] / cx;
      }
    }
  });
  std::vector<double> numerator(static_cast<std::size_t>(K), 0.0);
  std::vector<double> denominator(static_cast<std::size_t>(K), 0.0);
  for (int c = 0; c < chunks; ++c)
    for (int k = 0; k < K; ++k) {
      numerator[static_cast<std::size_t>(k)] += num[static_cast<std::size_t>(c)][static_cast<std::size_t>(k)];
      denominator[static_cast<std::size_t>(k)] += den[static_cast<std::size_t>(c)][static_cast<std::size_t>(k)];
    }
  for (int k = 0; k < K; ++k) {
    if (!(denominator[static_cast<std::size_t>(k)] > 0.0))
      throw_numeric("update_pi: degenerate atlas normalization for label " +
                    std::to_string(params.config.labels[static_cast<std::size_t>(k)]));
    params.pi[static_cast<std::size_t>(k)] =
        numerator[static_cast<std::size_t>(k)] / denominator[static_cast<std::size_t>(k)];
  }
}

EmResult em_iterate(const ModelParams& initial, const EvalCache& cache, int n_iters, double tol,
                    int workers) {
  EmResult res;
  res.params = initial;
  res.ll_trace.push_back(total_log_likelihood(res.params, cache, workers));
  for (int m = 0; m < n_iters; ++m) {
    PosteriorField post = e_step(res.params, cache, workers);
    m_step(res.params, post, cache, workers);
    update_pi(res.params, post, cache, workers);
    const double ll = total_log_likelihood(res.params, cache, workers);
    const double prev = res.ll_trace.back();
    res.ll_trace.push_back(ll);
    if (std::abs(ll - prev) < tol * std::abs(ll)) {
      res.converged = true;
      break;
    }
  }
  res.posteriors = e_step(res.params, cache, workers);
  return res;
}

LabelVolume hard_segmentation_common(const PosteriorField& posteriors, const ModelParams& params,
                                     const EvalCache& cache, const GridLayout& common) {
  const std::size_t V = common.voxel_count();
  const int K = params.config.n_labels();
  LabelVolume out = LabelVolume::filled(common, 0);
  std::vector<double> prior(static_cast<std::size_t>(K));
  for (std::size_t v = 0; v < V; ++v) {
    const double* scores;
    if (cache.partition.region_of[v] >= 0) {
      scores = &posteriors.label_post[v * static_cast<std::size_t>(K)];
    } else {
      // No covering image: fall back to the arg-max spatial prior.
      spatial_prior_row(params, &cache.atlas_probs[v * static_cast<std::size_t>(K)],
                        prior.data());
      scores = prior.data();
    }
    int best_k = 0;
    for (int k = 1; k < K; ++k) {
      const double s = scores[k];
      const double b = scores[best_k];
      if (s > b || (s == b && params.config.labels[static_cast<std::size_t>(k)] <
                                  params.config.labels[static_cast<std::size_t>(best_k)]))
        best_k = k;
    }
    out.labels[v] = params.config.labels[static_cast<std::size_t>(best_k)];
  }
  return out;
}

LabelVolume resample_labels_to_image(const LabelVolume& common_labels, const VoxelGrid& image,
                                     const SliceAffineSet& slices, int image_index) {
  LabelVolume out = LabelVolume::filled(image.layout(), 0);
  const GridLayout common = common_labels.layout();
  for (int z = 0; z < image.dims[2]; ++z) {
    const Vec3 center = slice_center(image, z);
    const SliceTransform& t =
        slices.per_image[static_cast<std::size_t>(image_index)][static_cast<std::size_t>(z)];
    for (int y = 0; y < image.dims[1]; ++y) {
      for (int x = 0; x < image.dims[0]; ++x) {
        const Vec3 q = image.voxel_center(x, y, z);
        const Vec3 p = t.is_identity(slices.mode)
                           ? q
                           : invert_slice_params(slices.mode, t, q, center);
        Index3 idx;
        for (int a = 0; a < 3; ++a) {
          const double qi = (p[a] - common.origin[a]) / common.spacing[a];
          idx[a] = std::clamp(static_cast<int>(std::lround(qi)), 0, common.dims[a] - 1);
        }
        out.at(x, y, z) =
            common_labels.labels[static_cast<std::size_t>(idx[0]) +
                                 static_cast<std::size_t>(common.dims[0]) *
                                     (static_cast<std::size_t>(idx[1]) +
                                      static_cast<std::size_t>(common.dims[1]) * idx[2])];
      }
    }
  }
  return out;
}

void write_ll_trace(const std::string& path, const std::vector<double>& trace) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw_validation("cannot write LL trace: " + path);
  for (std::size_t i = 0; i < trace.size(); ++i)
    out << i << " " << format_double(trace[i]) << "\n";
  if (!out) throw_validation("failed writing LL trace: " + path);
}

}  // namespace mvmm
