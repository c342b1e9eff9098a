#ifndef MVMM_C_H
#define MVMM_C_H

/* C API of the mvmm segmentation engine.
 *
 * All entry points return an mvmm_status; on failure mvmm_last_error()
 * holds a message for the calling thread. Objects returned through out
 * parameters are owned by the caller and released with the matching
 * *_free function. Strings returned through out parameters are released
 * with mvmm_string_free.
 */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define MVMM_API __declspec(dllexport)
#else
#define MVMM_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum mvmm_status {
  MVMM_OK = 0,
  MVMM_ERR_VALIDATION = 1, /* bad inputs: config, files, geometry */
  MVMM_ERR_NUMERIC = 2,    /* degenerate likelihood or gradient */
  MVMM_ERR_PARTIAL = 3     /* some table rows failed; output still usable */
} mvmm_status;

MVMM_API const char* mvmm_version(void);

/* Message of the last failing call on this thread; empty string if none. */
MVMM_API const char* mvmm_last_error(void);

MVMM_API void mvmm_string_free(char* s);

/* Line-oriented progress log for the pipeline commands; NULL disables. */
typedef void (*mvmm_log_fn)(const char* line, void* user);
MVMM_API void mvmm_set_log_fn(mvmm_log_fn fn, void* user);

/* Worker count used when a command is called with workers = 0
 * (0 = consult the MVMM_WORKERS environment variable, then 1). */
MVMM_API void mvmm_set_default_workers(int workers);

/* --- volumes ------------------------------------------------------------ */

typedef struct mvmm_volume mvmm_volume;

MVMM_API mvmm_status mvmm_volume_read(const char* hdr_path, mvmm_volume** out);
MVMM_API mvmm_status mvmm_volume_write(const mvmm_volume* vol, const char* hdr_path);
MVMM_API void mvmm_volume_free(mvmm_volume* vol);

MVMM_API mvmm_status mvmm_volume_dims(const mvmm_volume* vol, int32_t dims[3]);
MVMM_API mvmm_status mvmm_volume_spacing(const mvmm_volume* vol, double spacing[3]);
MVMM_API mvmm_status mvmm_volume_origin(const mvmm_volume* vol, double origin[3]);
MVMM_API mvmm_status mvmm_volume_value_count(const mvmm_volume* vol, size_t* count);
/* Copies min(count, len) values in x-fastest order. */
MVMM_API mvmm_status mvmm_volume_values(const mvmm_volume* vol, double* buffer, size_t len);

/* Dice overlap and symmetrized average contour distance over one label;
 * both volumes must hold integer labels on the same lattice. */
MVMM_API mvmm_status mvmm_dice(const mvmm_volume* seg, const mvmm_volume* truth, int32_t label,
                               double* out);
MVMM_API mvmm_status mvmm_acd(const mvmm_volume* seg, const mvmm_volume* truth, int32_t label,
                              double* out_mm);

/* --- pipeline commands --------------------------------------------------- */

/* Generates the phantom file set described by spec_path into out_dir. */
MVMM_API mvmm_status mvmm_phantom(const char* spec_path, const char* out_dir, int workers);

/* Runs the segmentation pipeline from a run config file. */
MVMM_API mvmm_status mvmm_segment(const char* config_path, int workers);

/* Dice/ACD table over (seg, truth) pairs. *table_out receives a malloc'd
 * text table. Returns MVMM_ERR_PARTIAL when some rows failed. */
MVMM_API mvmm_status mvmm_evaluate(const char* const* seg_paths, size_t n_seg,
                                   const char* const* truth_paths, size_t n_truth,
                                   const int32_t* labels, size_t n_labels, char** table_out);

/* Runs the four registration-scheme presets and tables their scores.
 * Returns MVMM_ERR_PARTIAL when a preset failed. */
MVMM_API mvmm_status mvmm_ablate(const char* config_path, int workers, char** table_out);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* MVMM_C_H */
