#ifndef CTXSENSE_H
#define CTXSENSE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CtxStatus {
  CTX_STATUS_OK = 0,
  CTX_STATUS_NULL_POINTER = 1,
  CTX_STATUS_INVALID_ARGUMENT = 2,
  CTX_STATUS_PARSE = 3,
  CTX_STATUS_INSUFFICIENT_DATA = 4,
  CTX_STATUS_INTERNAL = 5,
} CtxStatus;

/*
 Opaque feature table: one row per interval, 13 features per row.
 */
typedef struct CtxFeatureMatrix CtxFeatureMatrix;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library version, a static NUL-terminated string.
 */
const char *ctxsense_version(void);

/*
 Message of the last failed call on this thread, or NULL. Valid until
 the next ctxsense call on the same thread.
 */
const char *ctxsense_last_error(void);

size_t ctxsense_feature_count(void);

/*
 Static name of feature `index`, or NULL when out of range.
 */
const char *ctxsense_feature_name(size_t index);

void ctxsense_string_free(char *s);

void ctxsense_matrix_free(struct CtxFeatureMatrix *m);

/*
 Parse a feature table from CSV text.
 */
enum CtxStatus ctxsense_matrix_parse_csv(const char *text, struct CtxFeatureMatrix **out);

/*
 Read a feature table written by `ctxsense extract`.
 */
enum CtxStatus ctxsense_matrix_read_csv(const char *path, struct CtxFeatureMatrix **out);

/*
 Extract the feature table from a study directory.
 */
enum CtxStatus ctxsense_extract_study(const char *study_dir,
                                      const char *config_json,
                                      struct CtxFeatureMatrix **out);

enum CtxStatus ctxsense_matrix_rows(const struct CtxFeatureMatrix *m, size_t *out);

/*
 Copy all values row-major into `buf`, which must hold at least
 rows * 13 doubles.
 */
enum CtxStatus ctxsense_matrix_values(const struct CtxFeatureMatrix *m, double *buf, size_t len);

/*
 Row key as "participant/event/phase".
 */
enum CtxStatus ctxsense_matrix_row_key(const struct CtxFeatureMatrix *m, size_t row, char **out);

enum CtxStatus ctxsense_matrix_to_csv(const struct CtxFeatureMatrix *m, char **out);

/*
 Univariate tests, k-best curve and importances for one task, as JSON.
 */
enum CtxStatus ctxsense_analyze_task(const struct CtxFeatureMatrix *m,
                                     const char *task,
                                     const char *config_json,
                                     char **out_json);

/*
 HDBSCAN on a task's conditioned rows using the `k` best features;
 `k = 0` picks the task default.
 */
enum CtxStatus ctxsense_cluster_task(const struct CtxFeatureMatrix *m,
                                     const char *task,
                                     size_t k,
                                     const char *config_json,
                                     char **out_json);

/*
 The four centring/scaling combinations over all five tasks, as JSON.
 */
enum CtxStatus ctxsense_conditioning_benchmark(const struct CtxFeatureMatrix *m,
                                               const char *config_json,
                                               char **out_json);

/*
 Write a synthetic study described by the `synth` section of the config.
 */
enum CtxStatus ctxsense_synth_study(const char *out_dir, const char *config_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CTXSENSE_H */
