#include "mvmm/icm.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <ostream>

#include "mvmm/config.hpp"
#include "mvmm/error.hpp"

namespace mvmm {

namespace {

using Clock = std::chrono::steady_clock;

long ms_since(Clock::time_point t0) {
  return std::chrono::duration_cast<std::chrono::milliseconds>(Clock::now() - t0).count();
}

std::vector<double> slice_scales(const Schedule& s) {
  if (s.slice_mode == SliceMode::rigid)
    return {s.step_trans_mm, s.step_trans_mm, s.step_rot_rad};
  return {s.step_trans_mm, s.step_trans_mm, s.step_affine,
          s.step_affine,   s.step_affine,   s.step_affine};
}

struct RegOutcome {
  int accepted = 0;
  int rejected = 0;
  double ll = 0.0;
};

}  // namespace

Schedule Schedule::preset(const std::string& name) {
  Schedule s;
  if (name == "mvmm-full") {
    s.enable_sc = true;
    s.enable_ffd = true;
  } else if (name == "mvmm-minus") {
    s.enable_sc = false;
    s.enable_ffd = false;
  } else if (name == "mvmm-minus-sc") {
    s.enable_sc = true;
    s.enable_ffd = false;
  } else if (name == "mvmm-minus-ffd") {
    s.enable_sc = false;
    s.enable_ffd = true;
  } else {
    throw_validation("unknown schedule preset `" + name +
                     "` (mvmm-minus, mvmm-minus-sc, mvmm-minus-ffd, mvmm-full)");
  }
  return s;
}

namespace {

// One backtracking step per slice of every image; accepted moves update the
// cache rows in place. Returns the running total LL.
RegOutcome slice_correction_pass(
    const MultivariateImageSet& images, const ModelParams& params, TransformState& transforms,
    EvalCache& cache, const std::vector<std::vector<std::vector<std::size_t>>>& slice_voxels,
    std::vector<std::vector<StepControl>>& slice_steps, const Schedule& schedule, double ll,
    int workers, std::vector<PhaseRecord>& trace) {
  RegOutcome out;
  out.ll = ll;
  const SliceMode mode = transforms.slices.mode;
  const int P = param_count(mode);
  const std::vector<double> scales = slice_scales(schedule);

  for (int i = 0; i < images.n_images(); ++i) {
    const auto& per_slice = slice_voxels[static_cast<std::size_t>(i)];
    for (std::size_t s = 0; s < per_slice.size(); ++s) {
      const auto& voxels = per_slice[s];
      if (voxels.empty()) continue;

      const auto grad = ll_gradient_slice_affine(params, images, transforms, cache, voxels, i,
                                                 static_cast<int>(s), workers);
      SliceTransform& cur =
          transforms.slices.per_image[static_cast<std::size_t>(i)][s];
      const double base = slice_restricted_ll(params, images, cache, voxels, i,
                                              static_cast<int>(s), mode, nullptr);
      SliceTransform proposal = cur;
      const auto outcome = gradient_ascent_step(
          std::span<double>(proposal.p.data(), static_cast<std::size_t>(P)),
          std::span<const double>(grad.data(), static_cast<std::size_t>(P)),
          std::span<const double>(scales.data(), static_cast<std::size_t>(P)),
          slice_steps[static_cast<std::size_t>(i)][s],
          [&](std::span<const double> p) {
            SliceTransform trial = cur;
            for (int j = 0; j < P; ++j) trial.p[static_cast<std::size_t>(j)] = p[static_cast<std::size_t>(j)];
            return slice_restricted_ll(params, images, cache, voxels, i, static_cast<int>(s),
                                       mode, &trial);
          },
          base);
      if (outcome.accepted && !outcome.stationary) {
        cur = proposal;
        refresh_cache_image(cache, images, transforms, i, voxels);
        out.ll += outcome.ll_after - outcome.ll_before;
        ++out.accepted;
        trace.push_back({"sc", out.ll});
      } else if (!outcome.accepted) {
        ++out.rejected;
      }
    }
  }
  rebuild_partition(cache);
  return out;
}

RegOutcome ffd_correction_pass(const MultivariateImageSet& images, const AtlasPrior& atlas,
                               const ModelParams& params, TransformState& transforms,
                               EvalCache& cache, StepControl& ffd_step,
                               const Schedule& schedule, double ll, int workers,
                               std::vector<PhaseRecord>& trace) {
  RegOutcome out;
  out.ll = ll;
  const auto grad_vec = ll_gradient_ffd(params, images, atlas, transforms, cache, workers);
  const std::size_t C = grad_vec.size();
  if (C == 0) return out;

  std::vector<double> flat_params(3 * C), flat_grad(3 * C);
  for (std::size_t d = 0; d < C; ++d)
    for (int a = 0; a < 3; ++a) {
      flat_params[3 * d + static_cast<std::size_t>(a)] = transforms.ffd.phi[d][static_cast<std::size_t>(a)];
      flat_grad[3 * d + static_cast<std::size_t>(a)] = grad_vec[d][static_cast<std::size_t>(a)];
    }
  const std::vector<double> scales(3 * C, schedule.step_ffd_mm);

  std::vector<double> staged_atlas;
  FfdDeformation trial = transforms.ffd;
  const auto outcome = gradient_ascent_step(
      flat_params, flat_grad, scales, ffd_step,
      [&](std::span<const double> p) {
        for (std::size_t d = 0; d < C; ++d)
          for (int a = 0; a < 3; ++a)
            trial.phi[d][static_cast<std::size_t>(a)] = p[3 * d + static_cast<std::size_t>(a)];
        sample_atlas_probs(images, atlas, trial, staged_atlas, workers);
        return total_ll_with_atlas(params, cache, staged_atlas, workers);
      },
      ll);
  if (outcome.accepted && !outcome.stationary) {
    for (std::size_t d = 0; d < C; ++d)
      for (int a = 0; a < 3; ++a)
        transforms.ffd.phi[d][static_cast<std::size_t>(a)] =
            flat_params[3 * d + static_cast<std::size_t>(a)];
    sample_atlas_probs(images, atlas, transforms.ffd, cache.atlas_probs, workers);
    out.ll = outcome.ll_after;
    ++out.accepted;
    trace.push_back({"ffd", out.ll});
  } else if (!outcome.accepted) {
    ++out.rejected;
  }
  return out;
}

// Shared in-plane move of all slices of one image: the coarse pre-alignment
// stand-in for an external atlas-to-target initializer.
RegOutcome pre_align_pass(const MultivariateImageSet& images, const ModelParams& params,
                          TransformState& transforms, EvalCache& cache,
                          const std::vector<std::vector<std::vector<std::size_t>>>& slice_voxels,
                          const Schedule& schedule, double ll, int workers,
                          std::vector<PhaseRecord>& trace) {
  RegOutcome out;
  out.ll = ll;
  const SliceMode mode = transforms.slices.mode;
  const int P = param_count(mode);
  const std::vector<double> scales = slice_scales(schedule);

  for (int i = 0; i < images.n_images(); ++i) {
    StepControl ctrl;
    ctrl.max_halvings = schedule.max_halvings;
    for (int iter = 0; iter < 20; ++iter) {
      const auto& per_slice = slice_voxels[static_cast<std::size_t>(i)];
      std::vector<double> grad(static_cast<std::size_t>(P), 0.0);
      for (std::size_t s = 0; s < per_slice.size(); ++s) {
        if (per_slice[s].empty()) continue;
        const auto g = ll_gradient_slice_affine(params, images, transforms, cache, per_slice[s],
                                                i, static_cast<int>(s), workers);
        for (int j = 0; j < P; ++j) grad[static_cast<std::size_t>(j)] += g[static_cast<std::size_t>(j)];
      }
      // Trial delta applied to every slice of image i.
      std::vector<double> delta(static_cast<std::size_t>(P), 0.0);
      const SliceAffineSet saved = transforms.slices;
      const auto outcome = gradient_ascent_step(
          delta, grad, scales, ctrl,
          [&](std::span<const double> d) {
            double trial_ll = out.ll;
            for (std::size_t s = 0; s < per_slice.size(); ++s) {
              if (per_slice[s].empty()) continue;
              SliceTransform t = saved.per_image[static_cast<std::size_t>(i)][s];
              for (int j = 0; j < P; ++j) t.p[static_cast<std::size_t>(j)] += d[static_cast<std::size_t>(j)];
              const double before = slice_restricted_ll(params, images, cache, per_slice[s], i,
                                                        static_cast<int>(s), mode, nullptr);
              const double after = slice_restricted_ll(params, images, cache, per_slice[s], i,
                                                       static_cast<int>(s), mode, &t);
              trial_ll += after - before;
            }
            return trial_ll;
          },
          out.ll);
      if (!outcome.accepted || outcome.stationary) {
        if (!outcome.accepted) ++out.rejected;
        break;
      }
      for (std::size_t s = 0; s < per_slice.size(); ++s) {
        auto& t = transforms.slices.per_image[static_cast<std::size_t>(i)][s];
        for (int j = 0; j < P; ++j) t.p[static_cast<std::size_t>(j)] += delta[static_cast<std::size_t>(j)];
        if (!per_slice[s].empty())
          refresh_cache_image(cache, images, transforms, i, per_slice[s]);
      }
      out.ll = outcome.ll_after;
      ++out.accepted;
      trace.push_back({"prealign", out.ll});
    }
  }
  rebuild_partition(cache);
  return out;
}

}  // namespace

IcmState run_icm(const MultivariateImageSet& images, const AtlasPrior& atlas,
                 const LabelConfig& config, const Schedule& schedule, int workers,
                 std::ostream* run_log) {
  images.validate();
  atlas.validate();
  config.validate();
  if (atlas.labels != config.labels)
    throw_validation("run_icm: atlas labels do not match the configured label set");
  if (config.n_images() != images.n_images())
    throw_validation("run_icm: label config image count does not match the image set");

  auto log = [&](const std::string& line) {
    if (run_log) (*run_log) << line << "\n";
  };

  IcmState state;
  state.transforms = TransformState::identity_for(images.images, schedule.slice_mode);
  if (schedule.enable_ffd)
    state.transforms.ffd =
        FfdDeformation::for_domain(images.common_space, {schedule.ffd_spacing_mm,
                                                         schedule.ffd_spacing_mm,
                                                         schedule.ffd_spacing_mm});

  const auto t0 = Clock::now();
  state.cache = build_eval_cache(images, atlas, state.transforms, workers);
  state.params = initialize_params(images, config, state.cache);
  double ll = total_log_likelihood(state.params, state.cache, workers);
  state.ll_trace.push_back({"init", ll});
  log("RUN images=" + std::to_string(images.n_images()) +
      " labels=" + std::to_string(config.n_labels()) + " workers=" + std::to_string(workers));
  log("PHASE init ll=" + format_double(ll) + " wall_ms=" + std::to_string(ms_since(t0)));

  const auto slice_voxels = slice_voxel_lists(images);
  std::vector<std::vector<StepControl>> slice_steps(static_cast<std::size_t>(images.n_images()));
  for (int i = 0; i < images.n_images(); ++i)
    slice_steps[static_cast<std::size_t>(i)]
        .assign(images.images[static_cast<std::size_t>(i)].dims[2],
                StepControl{1.0, 1.0, schedule.max_halvings});
  StepControl ffd_step{1.0, 1.0, schedule.max_halvings};

  if (schedule.pre_align) {
    const auto tp = Clock::now();
    const auto pre = pre_align_pass(images, state.params, state.transforms, state.cache,
                                    slice_voxels, schedule, ll, workers, state.ll_trace);
    ll = pre.ll;
    log("PHASE prealign ll=" + format_double(ll) + " accepted=" + std::to_string(pre.accepted) +
        " rejected=" + std::to_string(pre.rejected) + " wall_ms=" + std::to_string(ms_since(tp)));
  }

  for (int round = 1; round <= schedule.max_rounds; ++round) {
    const double round_start_ll = ll;

    const auto tem = Clock::now();
    EmResult em = em_iterate(state.params, state.cache, schedule.em_iters, schedule.em_tol,
                             workers);
    state.params = std::move(em.params);
    state.posteriors = std::move(em.posteriors);
    // em trace starts at the current LL; skip the duplicate head entry.
    for (std::size_t i = 1; i < em.ll_trace.size(); ++i)
      state.ll_trace.push_back({"em", em.ll_trace[i]});
    const double ll_after_em = em.ll_trace.back();
    log("PHASE em round=" + std::to_string(round) + " iters=" +
        std::to_string(em.ll_trace.size() - 1) + " ll_before=" + format_double(ll) +
        " ll_after=" + format_double(ll_after_em) + " wall_ms=" + std::to_string(ms_since(tem)));
    ll = ll_after_em;

    int accepted_this_round = 0;
    if (schedule.enable_sc) {
      const auto tsc = Clock::now();
      const auto sc = slice_correction_pass(images, state.params, state.transforms, state.cache,
                                            slice_voxels, slice_steps, schedule, ll, workers,
                                            state.ll_trace);
      log("PHASE sc round=" + std::to_string(round) + " accepted=" + std::to_string(sc.accepted) +
          " rejected=" + std::to_string(sc.rejected) + " ll_before=" + format_double(ll) +
          " ll_after=" + format_double(sc.ll) + " wall_ms=" + std::to_string(ms_since(tsc)));
      ll = sc.ll;
      accepted_this_round += sc.accepted;
    }
    if (schedule.enable_ffd) {
      const auto tffd = Clock::now();
      const auto ffd = ffd_correction_pass(images, atlas, state.params, state.transforms,
                                           state.cache, ffd_step, schedule, ll, workers,
                                           state.ll_trace);
      log("PHASE ffd round=" + std::to_string(round) + " accepted=" +
          std::to_string(ffd.accepted) + " rejected=" + std::to_string(ffd.rejected) +
          " ll_before=" + format_double(ll) + " ll_after=" + format_double(ffd.ll) +
          " wall_ms=" + std::to_string(ms_since(tffd)));
      ll = ffd.ll;
      accepted_this_round += ffd.accepted;
    }

    // Re-anchor on a freshly computed total to shed accumulated deltas.
    ll = total_log_likelihood(state.params, state.cache, workers);
    state.rounds = round;
    const double gain = ll - round_start_ll;
    log("ROUND " + std::to_string(round) + " ll=" + format_double(ll) + " gain=" +
        format_double(gain) + " accepted=" + std::to_string(accepted_this_round));
    if (std::abs(gain) < schedule.round_tol * std::abs(ll)) {
      state.converged = true;
      break;
    }
  }

  state.posteriors = e_step(state.params, state.cache, workers);
  log("RESULT rounds=" + std::to_string(state.rounds) + " ll=" + format_double(ll) +
      " converged=" + (state.converged ? std::string("true") : std::string("false")));
  return state;
}

void write_phase_trace(const std::string& path, const std::vector<PhaseRecord>& trace) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw_validation("cannot write LL trace: " + path);
  for (std::size_t i = 0; i < trace.size(); ++i)
    out << i << " " << trace[i].phase << " " << format_double(trace[i].ll) << "\n";
  if (!out) throw_validation("failed writing LL trace: " + path);
}

}  // namespace mvmm
