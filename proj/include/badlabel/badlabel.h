#ifndef BADLABEL_BADLABEL_H
#define BADLABEL_BADLABEL_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#  if defined(BADLABEL_BUILD)
#    define BL_API __declspec(dllexport)
#  else
#    define BL_API __declspec(dllimport)
#  endif
#else
#  define BL_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum bl_status {
  BL_OK = 0,
  BL_ERR_CONFIG = 1,   /* bad configuration value or unknown key */
  BL_ERR_DATA = 2,     /* unreadable, malformed or inconsistent files */
  BL_ERR_NUMERIC = 3,  /* non-finite values during training */
  BL_ERR_SHAPE = 4,
  BL_ERR_INVALID_ARG = 5,
  BL_ERR_INTERNAL = 6
} bl_status;

typedef struct bl_config bl_config;
typedef struct bl_dataset bl_dataset;
typedef struct bl_labels bl_labels;
typedef struct bl_model bl_model;
typedef struct bl_run bl_run;

/* Message of the last failure on the calling thread; never NULL. */
BL_API const char* bl_last_error(void);
BL_API const char* bl_version(void);

/* ---- configuration: dotted keys such as "rdm.lambda" ---- */

BL_API bl_status bl_config_new(bl_config** out);
BL_API void bl_config_free(bl_config* cfg);
BL_API bl_status bl_config_set(bl_config* cfg, const char* key, const char* value);
/* Copies the value (NUL-terminated) into buf when it fits; *needed receives
   the required size including the terminator. */
BL_API bl_status bl_config_get(const bl_config* cfg, const char* key, char* buf, size_t cap, size_t* needed);
BL_API bl_status bl_config_load(bl_config* cfg, const char* path);
BL_API bl_status bl_config_save(const bl_config* cfg, const char* path);
BL_API size_t bl_config_key_count(void);
BL_API const char* bl_config_key(size_t index);

/* ---- datasets: a train/test pair ---- */

/* Three Gaussian blobs; std <= 0 keeps the default spread. */
BL_API bl_status bl_dataset_synthetic(int train_per_class, int test_per_class, double std, uint64_t seed,
                                      bl_dataset** out);
/* IDX image/label files. Without test files the last sixth of the loaded
   rows becomes the test split. limit = 0 loads everything. */
BL_API bl_status bl_dataset_idx(const char* images, const char* labels, const char* test_images,
                                const char* test_labels, size_t limit, bl_dataset** out);
BL_API bl_status bl_dataset_load(const char* dir, bl_dataset** out);
BL_API bl_status bl_dataset_save(const bl_dataset* data, const char* dir, const char* kind);
BL_API void bl_dataset_free(bl_dataset* data);
BL_API bl_status bl_dataset_info(const bl_dataset* data, size_t* n_train, size_t* n_test, int* dim, int* classes);

/* ---- noisy labels ---- */

/* kind: "symmetric", "asymmetric", "idn" or "badlabel". cfg may be NULL. */
BL_API bl_status bl_labels_generate(const bl_dataset* data, const char* kind, double ratio, uint64_t seed,
                                    const bl_config* cfg, bl_labels** out);
BL_API bl_status bl_labels_load(const char* path, bl_labels** out);
BL_API bl_status bl_labels_save(const bl_labels* labels, const char* path);
BL_API void bl_labels_free(bl_labels* labels);
BL_API bl_status bl_labels_check(const bl_labels* labels, const bl_dataset* data);
BL_API bl_status bl_labels_noise_rate(const bl_labels* labels, double* out);
BL_API bl_status bl_labels_size(const bl_labels* labels, size_t* out);
BL_API bl_status bl_transition_save(const bl_labels* labels, const char* path);

/* ---- models ---- */

BL_API bl_status bl_model_load(const char* path, bl_model** out);
BL_API bl_status bl_model_save(const bl_model* model, const char* path);
BL_API void bl_model_free(bl_model* model);

/* Test accuracy of one model, or of the joint prediction of several. */
BL_API bl_status bl_evaluate(const bl_model* const* models, size_t count, const bl_dataset* data, double* accuracy);

/* Per-sample training loss of a model against the noisy labels. */
BL_API bl_status bl_loss_histogram_save(const bl_model* model, const bl_dataset* data, const bl_labels* labels,
                                        int bins, const char* path);
BL_API bl_status bl_separability_auc(const bl_model* model, const bl_dataset* data, const bl_labels* labels,
                                     double* out);

/* ---- training ---- */

/* method: "standard" or "robust-dividemix". The test split is evaluated
   after every epoch. */
BL_API bl_status bl_train(const bl_dataset* data, const bl_labels* labels, const bl_config* cfg, const char* method,
                          bl_run** out);
BL_API void bl_run_free(bl_run* run);
BL_API bl_status bl_run_model_count(const bl_run* run, int* out);
/* Returns a copy owned by the caller. */
BL_API bl_status bl_run_model(const bl_run* run, int index, bl_model** out);
BL_API bl_status bl_run_save_metrics(const bl_run* run, const char* path);
BL_API bl_status bl_run_summary(const bl_run* run, double* best, double* last_mean);

#ifdef __cplusplus
}
#endif

#endif
