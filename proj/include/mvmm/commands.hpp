#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mvmm/icm.hpp"
#include "mvmm/model.hpp"
#include "mvmm/phantom.hpp"

namespace mvmm {

// Parsed segmentation run configuration (also the base for ablation runs).
struct RunConfig {
  std::vector<std::string> image_paths;
  std::string atlas_prefix;  // files <prefix>_k<id>.vhdr per label
  LabelConfig label_config;
  std::optional<GridLayout> common_space;  // default: first image lattice
  Schedule schedule;
  std::string out_dir;
  bool write_posteriors = false;
  uint64_t seed = 0;
  int workers = 0;  // 0: resolve from flag / environment
  std::string truth_labels_path;  // ablate only
  std::vector<int> eval_labels;   // ablate only
};

RunConfig parse_run_config(const std::string& path);
PhantomSpec parse_phantom_spec(const std::string& path);

// Generates the phantom file set (sequences, truth, atlas, manifest and a
// ready-to-run segmentation config) into out_dir.
void cmd_phantom(const std::string& spec_path, const std::string& out_dir, int workers);

// Runs the full pipeline from a config file; writes segmentations, final
// parameters, transforms, LL trace and run log into the configured
// output directory.
void cmd_segment(const std::string& config_path, int workers);

// Dice/ACD table over (segmentation, truth) pairs; sets partial_failure when
// any row could not be evaluated.
std::string cmd_evaluate(const std::vector<std::string>& seg_paths,
                         const std::vector<std::string>& truth_paths,
                         const std::vector<int>& labels, bool* partial_failure);

// Runs the four registration-scheme presets on one configuration and tables
// per-preset Dice/ACD against the configured truth plus the final LL.
std::string cmd_ablate(const std::string& config_path, int workers, bool* partial_failure);

}  // namespace mvmm
