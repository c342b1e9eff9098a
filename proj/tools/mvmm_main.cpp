// mvmm command-line front end. Talks to the engine exclusively through the
// C API in mvmm/mvmm_c.h; exit codes mirror mvmm_status.

#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mvmm/mvmm_c.h"

namespace {

int finish(mvmm_status status) {
  if (status != MVMM_OK && status != MVMM_ERR_PARTIAL)
    std::fprintf(stderr, "error: %s\n", mvmm_last_error());
  else if (status == MVMM_ERR_PARTIAL)
    std::fprintf(stderr, "warning: some rows failed; see table\n");
  return static_cast<int>(status);
}

void print_table(char* table) {
  if (table) {
    std::fputs(table, stdout);
    mvmm_string_free(table);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mvmm - joint multivariate mixture segmentation of co-acquired volumes"};
  app.set_version_flag("--version", std::string(mvmm_version()));
  int workers = 0;
  app.add_option("--workers", workers,
                 "worker threads (0: MVMM_WORKERS env var, then 1; 1 is bit-exact)");

  std::string spec_path, out_dir, config_path;
  std::vector<std::string> seg_paths, truth_paths;
  std::vector<int> labels;

  auto* phantom = app.add_subcommand("phantom", "generate a synthetic phantom data set");
  phantom->add_option("spec", spec_path, "phantom spec file")->required();
  phantom->add_option("-o,--out", out_dir, "output directory")->required();

  auto* segment = app.add_subcommand("segment", "run the segmentation pipeline");
  segment->add_option("config", config_path, "run config file")->required();

  auto* evaluate = app.add_subcommand("evaluate", "score segmentations against truth labels");
  evaluate->add_option("--seg", seg_paths, "segmentation volume (.vhdr), repeatable")
      ->required();
  evaluate->add_option("--truth", truth_paths, "truth volume (.vhdr), repeatable")->required();
  evaluate->add_option("--labels", labels, "label ids to score")->required()->delimiter(',');

  auto* ablate = app.add_subcommand("ablate", "compare the four registration-scheme presets");
  ablate->add_option("config", config_path, "run config file")->required();

  app.require_subcommand(1);
  CLI11_PARSE(app, argc, argv);

  if (*phantom) return finish(mvmm_phantom(spec_path.c_str(), out_dir.c_str(), workers));

  if (*segment) return finish(mvmm_segment(config_path.c_str(), workers));

  if (*evaluate) {
    std::vector<const char*> segs, truths;
    for (const auto& s : seg_paths) segs.push_back(s.c_str());
    for (const auto& t : truth_paths) truths.push_back(t.c_str());
    std::vector<int32_t> lab(labels.begin(), labels.end());
    char* table = nullptr;
    const mvmm_status status = mvmm_evaluate(segs.data(), segs.size(), truths.data(),
                                             truths.size(), lab.data(), lab.size(), &table);
    print_table(table);
    return finish(status);
  }

  if (*ablate) {
    char* table = nullptr;
    const mvmm_status status = mvmm_ablate(config_path.c_str(), workers, &table);
    print_table(table);
    return finish(status);
  }

  return 0;
}
