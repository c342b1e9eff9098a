#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "mvmm/em.hpp"
#include "mvmm/model.hpp"
#include "mvmm/registration.hpp"

namespace mvmm {

// Outer-loop schedule: which registration corrections run, block budgets,
// tolerances and ascent step scales.
struct Schedule {
  bool enable_sc = true;
  bool enable_ffd = true;
  bool pre_align = false;
  SliceMode slice_mode = SliceMode::rigid;

  int em_iters = 100;
  double em_tol = 1e-6;
  int max_rounds = 20;
  double round_tol = 1e-6;

  double ffd_spacing_mm = 20.0;
  double step_trans_mm = 0.5;
  double step_rot_rad = 0.01;
  double step_affine = 0.01;
  double step_ffd_mm = 0.5;
  int max_halvings = 8;

  // Presets: mvmm-minus, mvmm-minus-sc, mvmm-minus-ffd, mvmm-full.
  static Schedule preset(const std::string& name);
};

struct PhaseRecord {
  std::string phase;  // init, em, sc, ffd, prealign
  double ll = 0.0;
};

struct IcmState {
  ModelParams params;
  PosteriorField posteriors;
  TransformState transforms;
  EvalCache cache;
  std::vector<PhaseRecord> ll_trace;
  int rounds = 0;
  bool converged = false;
};

// Alternates EM over the mixture parameters with accepted-only gradient
// ascent over the slice transforms and the atlas FFD, until the per-round
// LL gain falls below tolerance. The trace covers every accepted update.
IcmState run_icm(const MultivariateImageSet& images, const AtlasPrior& atlas,
                 const LabelConfig& config, const Schedule& schedule, int workers = 1,
                 std::ostream* run_log = nullptr);

void write_phase_trace(const std::string& path, const std::vector<PhaseRecord>& trace);

}  // namespace mvmm
