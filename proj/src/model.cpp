#include "mvmm/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "mvmm/config.hpp"
#include "mvmm/error.hpp"
#include "mvmm/parallel.hpp"

namespace mvmm {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kLogTwoPi = 1.8378770664093454836;
constexpr int kMaxImages = 32;
constexpr int kMaxLabels = 64;

std::string voxel_desc(const GridLayout& layout, std::size_t v) {
  const Index3 i = layout.unravel(v);
  return "voxel (" + std::to_string(i[0]) + "," + std::to_string(i[1]) + "," +
         std::to_string(i[2]) + ")";
}

}  // namespace

int LabelConfig::label_index(int label_id) const {
  for (int k = 0; k < n_labels(); ++k)
    if (labels[static_cast<std::size_t>(k)] == label_id) return k;
  return -1;
}

int LabelConfig::components(int image, int label_idx) const {
  return n_components[static_cast<std::size_t>(image)][static_cast<std::size_t>(label_idx)];
}

int LabelConfig::kc_count(int image) const {
  int total = 0;
  for (int k = 0; k < n_labels(); ++k) total += components(image, k);
  return total;
}

int LabelConfig::kc_offset(int image, int label_idx) const {
  int off = 0;
  for (int k = 0; k < label_idx; ++k) off += components(image, k);
  return off;
}

void LabelConfig::validate() const {
  if (labels.empty()) throw_validation("label config: no labels defined");
  if (static_cast<int>(labels.size()) > kMaxLabels)
    throw_validation("label config: at most " + std::to_string(kMaxLabels) + " labels supported");
  if (n_components.empty()) throw_validation("label config: no images defined");
  for (std::size_t k = 0; k < labels.size(); ++k)
    for (std::size_t l = k + 1; l < labels.size(); ++l)
      if (labels[k] == labels[l])
        throw_validation("label config: duplicate label id " + std::to_string(labels[k]));
  for (const auto& row : n_components) {
    if (row.size() != labels.size())
      throw_validation("label config: component table row does not match label count");
    for (const int c : row) {
      if (c < 1) throw_validation("label config: every (image, label) needs >= 1 component");
      if (c > 32) throw_validation("label config: at most 32 components per (image, label)");
    }
  }
}

void ModelParams::validate() const {
  config.validate();
  const int K = config.n_labels();
  const int N = config.n_images();
  if (static_cast<int>(pi.size()) != K) throw_validation("model params: pi size mismatch");
  for (int k = 0; k < K; ++k)
    if (!(pi[static_cast<std::size_t>(k)] >= 0.0))
      throw_validation("model params: pi must be >= 0 for label " +
                       std::to_string(config.labels[static_cast<std::size_t>(k)]));
  if (static_cast<int>(tau.size()) != N || static_cast<int>(mu.size()) != N ||
      static_cast<int>(sigma2.size()) != N || static_cast<int>(sigma_floor.size()) != N)
    throw_validation("model params: per-image table size mismatch");
  for (int i = 0; i < N; ++i) {
    const auto kc = static_cast<std::size_t>(config.kc_count(i));
    if (tau[i].size() != kc || mu[i].size() != kc || sigma2[i].size() != kc)
      throw_validation("model params: component table size mismatch for image " +
                       std::to_string(i));
    for (int k = 0; k < K; ++k) {
      const int off = config.kc_offset(i, k);
      const int nc = config.components(i, k);
      double sum = 0.0;
      for (int c = 0; c < nc; ++c) {
        const auto idx = static_cast<std::size_t>(off + c);
        if (!(tau[i][idx] >= 0.0)) throw_validation("model params: tau must be >= 0");
        if (!(sigma2[i][idx] > 0.0)) throw_validation("model params: sigma2 must be > 0");
        sum += tau[i][idx];
      }
      if (std::abs(sum - 1.0) > 1e-9)
        throw_validation("model params: component proportions of image " + std::to_string(i) +
                         ", label " + std::to_string(config.labels[static_cast<std::size_t>(k)]) +
                         " sum to " + std::to_string(sum));
    }
  }
}

void write_model_params(const ModelParams& params, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw_validation("cannot write model params: " + path);
  out << "[model]\n";
  out << "labels =";
  for (const int id : params.config.labels) out << " " << id;
  out << "\n";
  out << "images = " << params.config.n_images() << "\n";
  for (int i = 0; i < params.config.n_images(); ++i)
    for (int k = 0; k < params.config.n_labels(); ++k)
      out << "components = " << i << " " << params.config.labels[static_cast<std::size_t>(k)]
          << " " << params.config.components(i, k) << "\n";
  for (int k = 0; k < params.config.n_labels(); ++k)
    out << "pi = " << params.config.labels[static_cast<std::size_t>(k)] << " "
        << format_double(params.pi[static_cast<std::size_t>(k)]) << "\n";
  for (int i = 0; i < params.config.n_images(); ++i) {
    for (int k = 0; k < params.config.n_labels(); ++k) {
      const int off = params.config.kc_offset(i, k);
      for (int c = 0; c < params.config.components(i, k); ++c) {
        const auto idx = static_cast<std::size_t>(off + c);
        out << "gauss = " << i << " " << params.config.labels[static_cast<std::size_t>(k)] << " "
            << c << " " << format_double(params.tau[i][idx]) << " "
            << format_double(params.mu[i][idx]) << " " << format_double(params.sigma2[i][idx])
            << "\n";
      }
    }
  }
  for (int i = 0; i < params.config.n_images(); ++i)
    out << "sigma_floor = " << i << " " << format_double(params.sigma_floor[static_cast<std::size_t>(i)])
        << "\n";
  if (!out) throw_validation("failed writing model params: " + path);
}

ModelParams read_model_params(const std::string& path) {
  const ConfigDoc doc = ConfigDoc::parse_file(path);
  doc.enforce_schema(
      {{"model", {"labels", "images", "components", "pi", "gauss", "sigma_floor"}}});
  const ConfigSection& sec = doc.require("model");

  ModelParams p;
  for (const auto& tok : split_tokens(sec.require("labels", path)))
    p.config.labels.push_back(parse_int(tok, path));
  const int n_images = parse_int(sec.require("images", path), path);
  if (n_images < 1) throw_validation(path + ": images must be >= 1");
  const int K = static_cast<int>(p.config.labels.size());
  p.config.n_components.assign(static_cast<std::size_t>(n_images),
                               std::vector<int>(static_cast<std::size_t>(K), 0));
  for (const auto& line : sec.get_all("components")) {
    const auto toks = split_tokens(line);
    if (toks.size() != 3) throw_validation(path + ": components entry needs image, label, count");
    const int i = parse_int(toks[0], path);
    const int k = p.config.label_index(parse_int(toks[1], path));
    if (i < 0 || i >= n_images || k < 0)
      throw_validation(path + ": components entry out of range: " + line);
    p.config.n_components[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] =
        parse_int(toks[2], path);
  }
  p.config.validate();

  p.pi.assign(static_cast<std::size_t>(K), -1.0);
  for (const auto& line : sec.get_all("pi")) {
    const auto toks = split_tokens(line);
    if (toks.size() != 2) throw_validation(path + ": pi entry needs label and value");
    const int k = p.config.label_index(parse_int(toks[0], path));
    if (k < 0) throw_validation(path + ": pi entry names unknown label: " + line);
    p.pi[static_cast<std::size_t>(k)] = parse_double(toks[1], path);
  }

  p.tau.resize(static_cast<std::size_t>(n_images));
  p.mu.resize(static_cast<std::size_t>(n_images));
  p.sigma2.resize(static_cast<std::size_t>(n_images));
  for (int i = 0; i < n_images; ++i) {
    const auto kc = static_cast<std::size_t>(p.config.kc_count(i));
    p.tau[static_cast<std::size_t>(i)].assign(kc, 0.0);
    p.mu[static_cast<std::size_t>(i)].assign(kc, 0.0);
    p.sigma2[static_cast<std::size_t>(i)].assign(kc, 0.0);
  }
  for (const auto& line : sec.get_all("gauss")) {
    const auto toks = split_tokens(line);
    if (toks.size() != 6)
      throw_validation(path + ": gauss entry needs image, label, component, tau, mu, sigma2");
    const int i = parse_int(toks[0], path);
    const int k = p.config.label_index(parse_int(toks[1], path));
    const int c = parse_int(toks[2], path);
    if (i < 0 || i >= n_images || k < 0 || c < 0 || c >= p.config.components(i, k))
      throw_validation(path + ": gauss entry out of range: " + line);
    const auto idx = static_cast<std::size_t>(p.config.kc_offset(i, k) + c);
    p.tau[static_cast<std::size_t>(i)][idx] = parse_double(toks[3], path);
    p.mu[static_cast<std::size_t>(i)][idx] = parse_double(toks[4], path);
    p.sigma2[static_cast<std::size_t>(i)][idx] = parse_double(toks[5], path);
  }
  p.sigma_floor.assign(static_cast<std::size_t>(n_images), 0.0);
  for (const auto& line : sec.get_all("sigma_floor")) {
    const auto toks = split_tokens(line);
    if (toks.size() != 2) throw_validation(path + ": sigma_floor entry needs image and value");
    const int i = parse_int(toks[0], path);
    if (i < 0 || i >= n_images) throw_validation(path + ": sigma_floor image out of range");
    p.sigma_floor[static_cast<std::size_t>(i)] = parse_double(toks[1], path);
  }
  p.validate();
  return p;
}

void AtlasPrior::validate() const {
  if (maps.empty()) throw_validation("atlas prior: no label maps");
  if (labels.size() != maps.size())
    throw_validation("atlas prior: label id count does not match map count");
  const GridLayout base = maps.front().layout();
  for (const auto& m : maps) {
    m.validate("atlas prior map");
    if (m.dims != base.dims)
      throw_validation("atlas prior: maps must share one lattice");
  }
}

void MultivariateImageSet::validate() const {
  if (images.empty()) throw_validation("image set: at least one image required");
  if (static_cast<int>(images.size()) > kMaxImages)
    throw_validation("image set: at most " + std::to_string(kMaxImages) + " images supported");
  for (const auto& img : images) img.validate("image");
  common_space.validate("common space");
}

std::size_t CoveragePartition::excluded_count() const {
  std::size_t n = 0;
  for (const int32_t r : region_of)
    if (r < 0) ++n;
  return n;
}

bool CoveragePartition::covers(int region, int image) const {
  const auto& v = covering_images[static_cast<std::size_t>(region)];
  return std::find(v.begin(), v.end(), image) != v.end();
}

EvalCache build_eval_cache(const MultivariateImageSet& images, const AtlasPrior& atlas,
                           const TransformState& transforms, int workers) {
  images.validate();
  atlas.validate();
  const std::size_t V = images.common_space.voxel_count();
  const int N = images.n_images();

  EvalCache cache;
  cache.common = images.common_space;
  cache.n_labels = atlas.n_labels();
  cache.intensity.assign(static_cast<std::size_t>(N), std::vector<double>(V, 0.0));
  cache.inside.assign(static_cast<std::size_t>(N), std::vector<uint8_t>(V, 0));

  for (int i = 0; i < N; ++i) {
    const VoxelGrid& img = images.images[static_cast<std::size_t>(i)];
    auto& vals = cache.intensity[static_cast<std::size_t>(i)];
    auto& ins = cache.inside[static_cast<std::size_t>(i)];
    parallel_chunks(V, workers, [&](std::size_t b, std::size_t e, int) {
      for (std::size_t v = b; v < e; ++v) {
        const Vec3 x = images.common_space.voxel_center(v);
        const Vec3 y = apply_slice_transform(transforms.slices, img, i, x);
        if (const auto s = trilinear_sample(img, y)) {
          vals[v] = *s;
          ins[v] = 1;
        } else {
          vals[v] = 0.0;
          ins[v] = 0;
        }
      }
    });
  }

  sample_atlas_probs(images, atlas, transforms.ffd, cache.atlas_probs, workers);
  rebuild_partition(cache);
  return cache;
}

void refresh_cache_image(EvalCache& cache, const MultivariateImageSet& images,
                         const TransformState& transforms, int image,
                         const std::vector<std::size_t>& voxels) {
  const VoxelGrid& img = images.images[static_cast<std::size_t>(image)];
  auto& vals = cache.intensity[static_cast<std::size_t>(image)];
  auto& ins = cache.inside[static_cast<std::size_t>(image)];
  for (const std::size_t v : voxels) {
    const Vec3 x = images.common_space.voxel_center(v);
    const Vec3 y = apply_slice_transform(transforms.slices, img, image, x);
    if (const auto s = trilinear_sample(img, y)) {
      vals[v] = *s;
      ins[v] = 1;
    } else {
      vals[v] = 0.0;
      ins[v] = 0;
    }
  }
}

void sample_atlas_probs(const MultivariateImageSet& images, const AtlasPrior& atlas,
                        const FfdDeformation& ffd, std::vector<double>& out, int workers) {
  const std::size_t V = images.common_space.voxel_count();
  const int K = atlas.n_labels();
  out.assign(V * static_cast<std::size_t>(K), 0.0);
  const double uniform = 1.0 / static_cast<double>(K);
  parallel_chunks(V, workers, [&](std::size_t b, std::size_t e, int) {
    for (std::size_t v = b; v < e; ++v) {
      const Vec3 x = images.common_space.voxel_center(v);
      const Vec3 y = apply_ffd(ffd, x);
      double* row = &out[v * static_cast<std::size_t>(K)];
      if (!atlas.maps.front().contains_world(y)) {
        for (int k = 0; k < K; ++k) row[k] = uniform;
        continue;
      }
      for (int k = 0; k < K; ++k) {
        const auto s = trilinear_sample(atlas.maps[static_cast<std::size_t>(k)], y);
        row[k] = s ? std::max(0.0, *s) : uniform;
      }
    }
  });
}

void rebuild_partition(EvalCache& cache) {
  const std::size_t V = cache.n_voxels();
  const int N = static_cast<int>(cache.intensity.size());
  CoveragePartition part;
  part.region_of.assign(V, -1);
  std::map<uint64_t, int32_t> region_ids;
  for (std::size_t v = 0; v < V; ++v) {
    uint64_t mask = 0;
    for (int i = 0; i < N; ++i)
      if (cache.inside[static_cast<std::size_t>(i)][v]) mask |= (uint64_t{1} << i);
    if (mask == 0) continue;
    auto it = region_ids.find(mask);
    if (it == region_ids.end()) {
      std::vector<int> cover;
      for (int i = 0; i < N; ++i)
        if (mask & (uint64_t{1} << i)) cover.push_back(i);
      part.covering_images.push_back(std::move(cover));
      it = region_ids.emplace(mask, static_cast<int32_t>(part.covering_images.size()) - 1).first;
    }
    part.region_of[v] = it->second;
  }
  if (part.covering_images.empty())
    throw_validation("coverage partition: no common-space voxel is covered by any image");
  cache.partition = std::move(part);
}

CoveragePartition build_coverage_partition(const MultivariateImageSet& images,
                                           const TransformState& transforms, int workers) {
  // The partition falls out of the sampling cache; the atlas plays no role
  // in it, so a single-label placeholder over the common lattice suffices.
  AtlasPrior dummy;
  dummy.labels = {0};
  VoxelGrid map = VoxelGrid::zeros(images.common_space);
  std::fill(map.values.begin(), map.values.end(), 1.0);
  dummy.maps.push_back(std::move(map));
  return build_eval_cache(images, dummy, transforms, workers).partition;
}

double gaussian_pdf(double mu, double sigma2, double x) {
  if (!(sigma2 > 0.0)) throw_validation("gaussian_pdf: sigma2 must be > 0");
  const double d = x - mu;
  return std::exp(-0.5 * d * d / sigma2) / std::sqrt(2.0 * M_PI * sigma2);
}

MixtureEval eval_tissue_mixture(const ModelParams& params, int image, int label_idx,
                                double value) {
  const int off = params.config.kc_offset(image, label_idx);
  const int nc = params.config.components(image, label_idx);
  const auto& tau = params.tau[static_cast<std::size_t>(image)];
  const auto& mu = params.mu[static_cast<std::size_t>(image)];
  const auto& s2 = params.sigma2[static_cast<std::size_t>(image)];

  double lw[32];
  double m = kNegInf;
  for (int c = 0; c < nc; ++c) {
    const auto i = static_cast<std::size_t>(off + c);
    const double d = value - mu[i];
    const double lphi = -0.5 * (kLogTwoPi + std::log(s2[i])) - 0.5 * d * d / s2[i];
    lw[c] = tau[i] > 0.0 ? std::log(tau[i]) + lphi : kNegInf;
    m = std::max(m, lw[c]);
  }
  if (m == kNegInf) return {std::log(kDensityFloor), 0.0};

  double sum = 0.0, dsum = 0.0;
  for (int c = 0; c < nc; ++c) {
    if (lw[c] == kNegInf) continue;
    const auto i = static_cast<std::size_t>(off + c);
    const double w = std::exp(lw[c] - m);
    sum += w;
    dsum += w * (mu[i] - value) / s2[i];
  }
  const double log_pdf = m + std::log(sum);
  const double log_floor = std::log(kDensityFloor);
  if (log_pdf > log_floor + 40.0) {
    return {log_pdf, dsum / sum};
  }
  // Near or below the floor: evaluate log(pdf + floor) and the damped
  // derivative explicitly; exp() may denormalize or flush to zero here.
  const double pdf_lin = std::exp(log_pdf);
  const double frac = pdf_lin / (pdf_lin + kDensityFloor);
  return {std::log(pdf_lin + kDensityFloor), frac * (dsum / sum)};
}

double tissue_intensity_pdf(const ModelParams& params, int image, int label_idx,
                            double intensity) {
  if (image < 0 || image >= params.config.n_images() || label_idx < 0 ||
      label_idx >= params.config.n_labels())
    throw_validation("tissue_intensity_pdf: unknown (image, label) pair");
  if (!std::isfinite(intensity))
    throw_validation("tissue_intensity_pdf: intensity must be finite");
  const int off = params.config.kc_offset(image, label_idx);
  const int nc = params.config.components(image, label_idx);
  double sum = 0.0;
  for (int c = 0; c < nc; ++c) {
    const auto i = static_cast<std::size_t>(off + c);
    sum += params.tau[static_cast<std::size_t>(image)][i] *
           gaussian_pdf(params.mu[static_cast<std::size_t>(image)][i],
                        params.sigma2[static_cast<std::size_t>(image)][i], intensity);
  }
  return sum;
}

double label_conditional_pdf(const Vec3& x, int label_idx, const MultivariateImageSet& images,
                             const TransformState& transforms, const ModelParams& params) {
  double prod = 1.0;
  bool any = false;
  for (int i = 0; i < images.n_images(); ++i) {
    const VoxelGrid& img = images.images[static_cast<std::size_t>(i)];
    const Vec3 y = apply_slice_transform(transforms.slices, img, i, x);
    if (const auto s = trilinear_sample(img, y)) {
      prod *= tissue_intensity_pdf(params, i, label_idx, *s);
      any = true;
    }
  }
  if (!any)
    throw_validation("label_conditional_pdf: point is covered by no image");
  return prod;
}

std::vector<double> atlas_probs_at(const Vec3& x, const AtlasPrior& atlas,
                                   const FfdDeformation& ffd) {
  const int K = atlas.n_labels();
  std::vector<double> row(static_cast<std::size_t>(K), 1.0 / static_cast<double>(K));
  const Vec3 y = apply_ffd(ffd, x);
  if (!atlas.maps.front().contains_world(y)) return row;
  for (int k = 0; k < K; ++k) {
    const auto s = trilinear_sample(atlas.maps[static_cast<std::size_t>(k)], y);
    row[static_cast<std::size_t>(k)] = s ? std::max(0.0, *s) : 1.0 / static_cast<double>(K);
  }
  return row;
}

void spatial_prior_row(const ModelParams& params, const double* atlas_row, double* prior_out) {
  const int K = params.config.n_labels();
  double nf = 0.0;
  for (int k = 0; k < K; ++k) {
    prior_out[k] = params.pi[static_cast<std::size_t>(k)] * atlas_row[k];
    nf += prior_out[k];
  }
  if (!(nf > 0.0))
    throw_numeric("spatial prior is degenerate: all pi_k * A_k vanish");
  for (int k = 0; k < K; ++k) prior_out[k] /= nf;
}

double spatial_prior(const Vec3& x, int label_idx, const ModelParams& params,
                     const AtlasPrior& atlas, const FfdDeformation& ffd) {
  const auto row = atlas_probs_at(x, atlas, ffd);
  std::vector<double> prior(row.size());
  try {
    spatial_prior_row(params, row.data(), prior.data());
  } catch (const Error&) {
    throw_numeric("spatial prior is degenerate at point (" + std::to_string(x[0]) + "," +
                  std::to_string(x[1]) + "," + std::to_string(x[2]) + ")");
  }
  return prior[static_cast<std::size_t>(label_idx)];
}

namespace {

double voxel_ll_core(const ModelParams& params, const EvalCache& cache, std::size_t voxel,
                     const double* atlas_table) {
  const int K = params.config.n_labels();
  const int N = static_cast<int>(cache.intensity.size());

  bool any = false;
  double value[kMaxImages];
  bool covered[kMaxImages];
  for (int i = 0; i < N; ++i) {
    covered[i] = cache.inside[static_cast<std::size_t>(i)][voxel] != 0;
    value[i] = cache.intensity[static_cast<std::size_t>(i)][voxel];
    any = any || covered[i];
  }
  if (!any) return 0.0;

  const double* atlas_row = atlas_table + voxel * static_cast<std::size_t>(K);
  double prior[kMaxLabels];
  spatial_prior_row(params, atlas_row, prior);

  double m = kNegInf;
  double t[kMaxLabels];
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
  if (m == kNegInf) return kNegInf;
  double s = 0.0;
  for (int k = 0; k < K; ++k)
    if (t[k] != kNegInf) s += std::exp(t[k] - m);
  return m + std::log(s);
}

double total_ll_core(const ModelParams& params, const EvalCache& cache,
                     const double* atlas_table, int workers) {
  const std::size_t V = cache.n_voxels();
  const int chunks = std::max(1, chunk_count(V, workers));
  std::vector<double> partial(static_cast<std::size_t>(chunks), 0.0);
  std::vector<int64_t> bad_voxel(static_cast<std::size_t>(chunks), -1);
  parallel_chunks(V, workers, [&](std::size_t b, std::size_t e, int c) {
    double acc = 0.0;
    for (std::size_t v = b; v < e; ++v) {
      const double ll = voxel_ll_core(params, cache, v, atlas_table);
      if (ll == kNegInf) {
        if (bad_voxel[static_cast<std::size_t>(c)] < 0)
          bad_voxel[static_cast<std::size_t>(c)] = static_cast<int64_t>(v);
        continue;
      }
      acc += ll;
    }
    partial[static_cast<std::size_t>(c)] = acc;
  });
  for (const int64_t bad : bad_voxel)
    if (bad >= 0)
      throw_numeric("log-likelihood is undefined (zero inner sum) at " +
                    voxel_desc(cache.common, static_cast<std::size_t>(bad)));
  double total = 0.0;
  for (const double p : partial) total += p;
  return total;
}

}  // namespace

double voxel_log_likelihood(const ModelParams& params, const EvalCache& cache,
                            std::size_t voxel) {
  return voxel_ll_core(params, cache, voxel, cache.atlas_probs.data());
}

double total_log_likelihood(const ModelParams& params, const EvalCache& cache, int workers) {
  return total_ll_core(params, cache, cache.atlas_probs.data(), workers);
}

double total_ll_with_atlas(const ModelParams& params, const EvalCache& cache,
                           const std::vector<double>& atlas_probs, int workers) {
  if (atlas_probs.size() != cache.atlas_probs.size())
    throw_validation("total_ll_with_atlas: replacement atlas table size mismatch");
  return total_ll_core(params, cache, atlas_probs.data(), workers);
}

SubregionLL ll_by_subregion(const ModelParams& params, const EvalCache& cache, int workers) {
  const std::size_t V = cache.n_voxels();
  const int R = cache.partition.n_regions();
  const int chunks = std::max(1, chunk_count(V, workers));
  std::vector<std::vector<double>> partial(static_cast<std::size_t>(chunks),
                                           std::vector<double>(static_cast<std::size_t>(R), 0.0));
  parallel_chunks(V, workers, [&](std::size_t b, std::size_t e, int c) {
    auto& acc = partial[static_cast<std::size_t>(c)];
    for (std::size_t v = b; v < e; ++v) {
      const int32_t r = cache.partition.region_of[v];
      if (r < 0) continue;
      acc[static_cast<std::size_t>(r)] += voxel_log_likelihood(params, cache, v);
    }
  });
  SubregionLL out;
  out.per_region.assign(static_cast<std::size_t>(R), 0.0);
  for (const auto& p : partial)
    for (int r = 0; r < R; ++r) out.per_region[static_cast<std::size_t>(r)] += p[static_cast<std::size_t>(r)];
  for (const double ll : out.per_region) out.total += ll;
  return out;
}

}  // namespace mvmm
