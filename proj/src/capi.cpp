#include "mvmm/mvmm_c.h"

#include <cstdlib>
#include <cstring>
#include <string>

#include "mvmm/commands.hpp"
#include "mvmm/error.hpp"
#include "mvmm/metrics.hpp"
#include "mvmm/volume.hpp"

struct mvmm_volume {
  mvmm::VoxelGrid grid;
};

namespace {

thread_local std::string g_last_error;

mvmm_log_fn g_log_fn = nullptr;
void* g_log_user = nullptr;
int g_default_workers = 0;

mvmm_status status_of(const mvmm::Error& e) {
  switch (e.code()) {
    case mvmm::ErrorCode::numeric:
      return MVMM_ERR_NUMERIC;
    case mvmm::ErrorCode::validation:
    default:
      return MVMM_ERR_VALIDATION;
  }
}

template <typename Fn>
mvmm_status guarded(Fn&& fn) {
  try {
    g_last_error.clear();
    return fn();
  } catch (const mvmm::Error& e) {
    g_last_error = e.what();
    return status_of(e);
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return MVMM_ERR_VALIDATION;
  }
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out) std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

int effective_workers(int workers) {
  return workers > 0 ? workers : g_default_workers;
}

}  // namespace

extern "C" {

const char* mvmm_version(void) { return "0.1.0"; }

const char* mvmm_last_error(void) { return g_last_error.c_str(); }

void mvmm_string_free(char* s) { std::free(s); }

void mvmm_set_log_fn(mvmm_log_fn fn, void* user) {
  g_log_fn = fn;
  g_log_user = user;
}

void mvmm_set_default_workers(int workers) { g_default_workers = workers; }

mvmm_status mvmm_volume_read(const char* hdr_path, mvmm_volume** out) {
  return guarded([&]() -> mvmm_status {
    if (!hdr_path || !out) mvmm::throw_validation("mvmm_volume_read: null argument");
    auto* vol = new mvmm_volume{mvmm::read_volume(hdr_path)};
    *out = vol;
    return MVMM_OK;
  });
}

mvmm_status mvmm_volume_write(const mvmm_volume* vol, const char* hdr_path) {
  return guarded([&]() -> mvmm_status {
    if (!vol || !hdr_path) mvmm::throw_validation("mvmm_volume_write: null argument");
    mvmm::write_volume(vol->grid, hdr_path);
    return MVMM_OK;
  });
}

void mvmm_volume_free(mvmm_volume* vol) { delete vol; }

mvmm_status mvmm_volume_dims(const mvmm_volume* vol, int32_t dims[3]) {
  return guarded([&]() -> mvmm_status {
    if (!vol || !dims) mvmm::throw_validation("mvmm_volume_dims: null argument");
    for (int a = 0; a < 3; ++a) dims[a] = vol->grid.dims[static_cast<std::size_t>(a)];
    return MVMM_OK;
  });
}

mvmm_status mvmm_volume_spacing(const mvmm_volume* vol, double spacing[3]) {
  return guarded([&]() -> mvmm_status {
    if (!vol || !spacing) mvmm::throw_validation("mvmm_volume_spacing: null argument");
    for (int a = 0; a < 3; ++a) spacing[a] = vol->grid.spacing[static_cast<std::size_t>(a)];
    return MVMM_OK;
  });
}

mvmm_status mvmm_volume_origin(const mvmm_volume* vol, double origin[3]) {
  return guarded([&]() -> mvmm_status {
    if (!vol || !origin) mvmm::throw_validation("mvmm_volume_origin: null argument");
    for (int a = 0; a < 3; ++a) origin[a] = vol->grid.origin[static_cast<std::size_t>(a)];
    return MVMM_OK;
  });
}

mvmm_status mvmm_volume_value_count(const mvmm_volume* vol, size_t* count) {
  return guarded([&]() -> mvmm_status {
    if (!vol || !count) mvmm::throw_validation("mvmm_volume_value_count: null argument");
    *count = vol->grid.values.size();
    return MVMM_OK;
  });
}

mvmm_status mvmm_volume_values(const mvmm_volume* vol, double* buffer, size_t len) {
  return guarded([&]() -> mvmm_status {
    if (!vol || !buffer) mvmm::throw_validation("mvmm_volume_values: null argument");
    const size_t n = std::min(len, vol->grid.values.size());
    std::memcpy(buffer, vol->grid.values.data(), n * sizeof(double));
    return MVMM_OK;
  });
}

mvmm_status mvmm_dice(const mvmm_volume* seg, const mvmm_volume* truth, int32_t label,
                      double* out) {
  return guarded([&]() -> mvmm_status {
    if (!seg || !truth || !out) mvmm::throw_validation("mvmm_dice: null argument");
    *out = mvmm::dice(mvmm::to_label_volume(seg->grid), mvmm::to_label_volume(truth->grid),
                      label);
    return MVMM_OK;
  });
}

mvmm_status mvmm_acd(const mvmm_volume* seg, const mvmm_volume* truth, int32_t label,
                     double* out_mm) {
  return guarded([&]() -> mvmm_status {
    if (!seg || !truth || !out_mm) mvmm::throw_validation("mvmm_acd: null argument");
    *out_mm = mvmm::acd_mm(mvmm::to_label_volume(seg->grid), mvmm::to_label_volume(truth->grid),
                           label);
    return MVMM_OK;
  });
}

mvmm_status mvmm_phantom(const char* spec_path, const char* out_dir, int workers) {
  return guarded([&]() -> mvmm_status {
    if (!spec_path || !out_dir) mvmm::throw_validation("mvmm_phantom: null argument");
    mvmm::cmd_phantom(spec_path, out_dir, effective_workers(workers));
    if (g_log_fn) g_log_fn(("phantom written to " + std::string(out_dir)).c_str(), g_log_user);
    return MVMM_OK;
  });
}

mvmm_status mvmm_segment(const char* config_path, int workers) {
  return guarded([&]() -> mvmm_status {
    if (!config_path) mvmm::throw_validation("mvmm_segment: null argument");
    mvmm::cmd_segment(config_path, effective_workers(workers));
    if (g_log_fn) g_log_fn("segmentation finished", g_log_user);
    return MVMM_OK;
  });
}

mvmm_status mvmm_evaluate(const char* const* seg_paths, size_t n_seg,
                          const char* const* truth_paths, size_t n_truth, const int32_t* labels,
                          size_t n_labels, char** table_out) {
  return guarded([&]() -> mvmm_status {
    if (!seg_paths || !truth_paths || !labels || !table_out)
      mvmm::throw_validation("mvmm_evaluate: null argument");
    std::vector<std::string> segs(seg_paths, seg_paths + n_seg);
    std::vector<std::string> truths(truth_paths, truth_paths + n_truth);
    std::vector<int> lab(labels, labels + n_labels);
    bool partial = false;
    const std::string table = mvmm::cmd_evaluate(segs, truths, lab, &partial);
    *table_out = dup_string(table);
    return partial ? MVMM_ERR_PARTIAL : MVMM_OK;
  });
}

mvmm_status mvmm_ablate(const char* config_path, int workers, char** table_out) {
  return guarded([&]() -> mvmm_status {
    if (!config_path || !table_out) mvmm::throw_validation("mvmm_ablate: null argument");
    bool partial = false;
    const std::string table =
        mvmm::cmd_ablate(config_path, effective_workers(workers), &partial);
    *table_out = dup_string(table);
    return partial ? MVMM_ERR_PARTIAL : MVMM_OK;
  });
}

}  // extern "C"
