/* SPDX-License-Identifier: Apache-2.0 */
/*
 * C interface to the homdet library. All handles are opaque. Functions return
 * a status code; on failure homdet_last_error() describes the problem for the
 * calling thread until the next call.
 */
#ifndef HOMDET_H
#define HOMDET_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define HOMDET_API __declspec(dllexport)
#else
#define HOMDET_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum homdet_status {
  HOMDET_OK = 0,
  HOMDET_E_CONTRACT = 1,
  HOMDET_E_CONFIG = 2,
  HOMDET_E_SCHEMA = 3,
  HOMDET_E_MISSING_FILE = 4,
  HOMDET_E_IO = 5,
  HOMDET_E_VERSION = 6,
  HOMDET_E_TRUNCATED = 7,
  HOMDET_E_DIVERGENCE = 8,
  HOMDET_E_INTERNAL = 9
} homdet_status;

typedef struct homdet_config homdet_config;
typedef struct homdet_dataset homdet_dataset;
typedef struct homdet_model homdet_model;

typedef void (*homdet_warning_fn)(const char* message, void* user);
/* Called after every training step. */
typedef void (*homdet_progress_fn)(long step, double total_loss, double domain_acc, void* user);

HOMDET_API const char* homdet_version(void);
HOMDET_API const char* homdet_last_error(void);
/* Step recorded by the most recent HOMDET_E_DIVERGENCE, or -1. */
HOMDET_API long homdet_last_divergence_step(void);
HOMDET_API const char* homdet_status_name(homdet_status status);
/* NULL restores the default (stderr). */
HOMDET_API void homdet_set_warning_handler(homdet_warning_fn fn, void* user);

/* Configuration. Text outputs follow the snprintf convention: at most `cap`
 * bytes are written (NUL included) and *needed receives the size required,
 * NUL included. */
HOMDET_API homdet_status homdet_config_default(homdet_config** out);
HOMDET_API homdet_status homdet_config_load(const char* path, homdet_config** out);
HOMDET_API homdet_status homdet_config_set(homdet_config* cfg, const char* key, const char* value);
HOMDET_API homdet_status homdet_config_get(const homdet_config* cfg, const char* key, char* buf, size_t cap,
                                           size_t* needed);
HOMDET_API homdet_status homdet_config_to_text(const homdet_config* cfg, int with_docs, char* buf, size_t cap,
                                               size_t* needed);
HOMDET_API homdet_status homdet_config_validate(const homdet_config* cfg);
HOMDET_API void homdet_config_free(homdet_config* cfg);

/* Synthetic corpus. `roles` is NULL (all labeled_source) or a comma-separated
 * list with one role per domain. Writes out_dir/manifest.json. */
HOMDET_API homdet_status homdet_synth(const char* out_dir, uint64_t seed, int domains, int images_per_domain,
                                      int patch_size, const char* roles, uint64_t* checksum);

HOMDET_API homdet_status homdet_dataset_load(const char* manifest_path, homdet_dataset** out);
HOMDET_API size_t homdet_dataset_size(const homdet_dataset* ds);
HOMDET_API size_t homdet_dataset_domains(const homdet_dataset* ds);
HOMDET_API void homdet_dataset_free(homdet_dataset* ds);

/* Splits the dataset with the config's fractions and seed, then trains.
 * `resume_ckpt` may be NULL. Writes checkpoints and train_log.csv to out_dir. */
HOMDET_API homdet_status homdet_train(const homdet_config* cfg, const homdet_dataset* ds, const char* out_dir,
                                      const char* resume_ckpt, homdet_progress_fn progress, void* user,
                                      long* final_step);

HOMDET_API homdet_status homdet_model_load(const char* ckpt_path, homdet_model** out);
/* Copy of the configuration stored in the checkpoint. */
HOMDET_API homdet_status homdet_model_config(const homdet_model* model, homdet_config** out);
HOMDET_API long homdet_model_step(const homdet_model* model);
HOMDET_API void homdet_model_free(homdet_model* model);

/* Evaluates `split` ("train", "val", "test") of the dataset split with the
 * model's configuration. Writes the metrics and PR CSVs (either may be NULL)
 * and, when `breakdown` is non-NULL, a per-domain AP text summary. */
HOMDET_API homdet_status homdet_evaluate(const homdet_model* model, const homdet_dataset* ds, const char* split,
                                         const char* metrics_csv, const char* pr_csv, double* map_out,
                                         char* breakdown, size_t cap, size_t* needed);
/* Same outputs with ground truth replayed as detections. `cfg` supplies the
 * split and may be NULL for defaults. */
HOMDET_API homdet_status homdet_evaluate_oracle(const homdet_config* cfg, const homdet_dataset* ds,
                                                const char* split, const char* metrics_csv, const char* pr_csv,
                                                double* map_out);

/* Detects on one PNG. Any output path may be NULL. */
HOMDET_API homdet_status homdet_infer(const homdet_model* model, const char* image_png, const char* overlay_png,
                                      const char* detections_json, const char* homogenized_png,
                                      size_t* num_detections);

HOMDET_API homdet_status homdet_plot_pr(const char* pr_csv, const char* svg_out);

#ifdef __cplusplus
}
#endif

#endif /* HOMDET_H */
