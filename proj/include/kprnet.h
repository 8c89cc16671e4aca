/* kprnet C API: opaque handles + status codes over the C++ core.
 *
 * Every function returns KPR_OK on success; on failure kpr_last_error()
 * holds a one-line diagnostic for the calling thread. */
#ifndef KPRNET_H
#define KPRNET_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum kpr_status {
    KPR_OK = 0,
    KPR_ERR_IO = 1,
    KPR_ERR_FORMAT = 2,
    KPR_ERR_DATA = 3,
    KPR_ERR_ARGUMENT = 4,
    KPR_ERR_STATE = 5,
    KPR_ERR_INTERNAL = 6
} kpr_status;

const char* kpr_last_error(void);
const char* kpr_version(void);

/* ---- configuration ---------------------------------------------------- */

typedef struct kpr_config kpr_config;

kpr_config* kpr_config_create(void);
void kpr_config_free(kpr_config* cfg);
kpr_status kpr_config_set(kpr_config* cfg, const char* key, const char* value);
kpr_status kpr_config_load(kpr_config* cfg, const char* path);
/* Writes the fully resolved config (one `key = value` per line). Returns
 * the required size (including NUL) through *needed; copies up to cap. */
kpr_status kpr_config_dump(const kpr_config* cfg, char* buf, size_t cap, size_t* needed);
kpr_status kpr_config_validate(const kpr_config* cfg);

/* ---- data handles ------------------------------------------------------ */

typedef struct kpr_cloud kpr_cloud;

kpr_status kpr_cloud_load(const char* path, kpr_cloud** out);
size_t kpr_cloud_size(const kpr_cloud* cloud);
void kpr_cloud_free(kpr_cloud* cloud);

typedef struct kpr_range_image kpr_range_image;

kpr_status kpr_project_cloud(const kpr_config* cfg, const kpr_cloud* cloud,
                             kpr_range_image** out);
int kpr_range_image_height(const kpr_range_image* img);
int kpr_range_image_width(const kpr_range_image* img);
kpr_status kpr_range_image_save(const kpr_range_image* img, const char* path);
void kpr_range_image_free(kpr_range_image* img);

/* ---- workflows (the CLI subcommands) ----------------------------------- */

/* One .kpri file per scan in out_dir; upsample_h/w of 0 keeps the native
 * resolution. print_stats != 0 prints per-scan drop/collision counts. */
kpr_status kpr_cmd_project(const kpr_config* cfg, const char* const* scan_paths, size_t n,
                           const char* out_dir, int upsample_h, int upsample_w,
                           int print_stats);

/* Generates a kernel-point disposition and writes it as a KPRW file. */
kpr_status kpr_cmd_kernel_points(const kpr_config* cfg, const char* out_path);

/* Trains on split.train sequences under data-root; writes metrics.csv,
 * config.txt and checkpoint.kprw into out_dir. */
kpr_status kpr_cmd_train(const kpr_config* cfg, const char* out_dir);

/* Per-scan .label prediction files into out_dir (KPConv path). */
kpr_status kpr_cmd_infer(const kpr_config* cfg, const char* checkpoint_path,
                         const char* const* scan_paths, size_t n, const char* out_dir);

/* KNN-filters existing per-point predictions against their scans. */
kpr_status kpr_cmd_postprocess(const kpr_config* cfg, const char* const* pred_paths,
                               const char* const* scan_paths, size_t n,
                               const char* out_dir);

/* Confusion-matrix evaluation of prediction files against ground truth.
 * Writes the aligned text table into `table` (truncating at cap) and the
 * CSV to csv_path when non-NULL. miou_out may be NULL. */
kpr_status kpr_cmd_eval(const kpr_config* cfg, const char* const* pred_paths,
                        const char* const* label_paths, size_t n, const char* csv_path,
                        char* table, size_t cap, double* miou_out);

#ifdef __cplusplus
}
#endif

#endif /* KPRNET_H */
