#ifndef QPULSE_H
#define QPULSE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  QP_STATUS_OK = 0,
  QP_STATUS_NULL_POINTER = 1,
  QP_STATUS_INVALID_UTF8 = 2,
  QP_STATUS_CONFIG = 3,
  QP_STATUS_RECORD = 4,
  QP_STATUS_NUMERICAL = 5,
  QP_STATUS_IO = 6,
  QP_STATUS_OUT_OF_RANGE = 7,
  QP_STATUS_PANIC = 8,
} QpStatus;

/**
 * A parsed run configuration.
 */
typedef struct QpConfig QpConfig;

typedef struct QpFilterBank QpFilterBank;

typedef struct QpRecord QpRecord;

/**
 * A column table of doubles with named columns.
 */
typedef struct QpTable QpTable;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version, a static string.
 */
const char *qp_version(void);

/**
 * Message of the last failed call on this thread, or NULL. Valid until the
 * next `qp_*` call on the same thread.
 */
const char *qp_last_error(void);

/**
 * # Safety
 * `s` must come from a `qpulse` call returning `char *`, or be NULL.
 */
void qp_string_free(char *s);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
QpStatus qp_config_load(const char *path, QpConfig **out);

/**
 * Parses configuration text; relative pulse files resolve against the
 * working directory.
 *
 * # Safety
 * `text` must be a NUL-terminated string and `out` a valid pointer.
 */
QpStatus qp_config_parse(const char *text, QpConfig **out);

/**
 * # Safety
 * `cfg` must come from `qp_config_load`/`qp_config_parse`, or be NULL.
 */
void qp_config_free(QpConfig *cfg);

/**
 * # Safety
 * `cfg` must be a live handle.
 */
QpStatus qp_config_validate(const QpConfig *cfg);

/**
 * Resolved configuration text; free with `qp_string_free`.
 *
 * # Safety
 * `cfg` must be a live handle or NULL.
 */
char *qp_config_render(const QpConfig *cfg);

/**
 * 16-hex-digit configuration hash; free with `qp_string_free`.
 *
 * # Safety
 * `cfg` must be a live handle or NULL.
 */
char *qp_config_hash(const QpConfig *cfg);

/**
 * # Safety
 * `cfg` must be a live handle.
 */
QpStatus qp_config_set_seed(QpConfig *cfg, uint64_t seed);

/**
 * # Safety
 * `cfg` must be a live handle.
 */
QpStatus qp_config_set_trajectories(QpConfig *cfg, size_t n);

/**
 * Observables of the unconditional evolution: columns t, photons, excited,
 * flux, integrated_flux, side_loss.
 *
 * # Safety
 * `cfg` must be a live handle and `out` a valid pointer.
 */
QpStatus qp_master_equation(const QpConfig *cfg, QpTable **out);

/**
 * Simulates trajectory `index` of the configured ensemble and filters it.
 * Writes the record, the posterior table (t, p_<label>..., Q_e) and the
 * index of the true hypothesis. `posteriors` and `truth` may be NULL.
 *
 * # Safety
 * `cfg` must be a live handle; `record` a valid pointer; `posteriors` and
 * `truth` valid or NULL.
 */
QpStatus qp_trajectory(const QpConfig *cfg,
                       size_t index,
                       QpRecord **record,
                       QpTable **posteriors,
                       size_t *truth);

/**
 * Filters a record with the configured hypotheses.
 *
 * # Safety
 * `cfg` and `record` must be live handles and `out` a valid pointer.
 */
QpStatus qp_replay(const QpConfig *cfg, const QpRecord *record, QpTable **out);

/**
 * Mean error probability over the configured ensemble: columns t, mean_qe,
 * sem_qe. `threads` = 0 uses every core.
 *
 * # Safety
 * `cfg` must be a live handle and `out` a valid pointer.
 */
QpStatus qp_ensemble(const QpConfig *cfg, size_t threads, QpTable **out);

/**
 * # Safety
 * `table` must be a live handle or NULL.
 */
size_t qp_table_rows(const QpTable *table);

/**
 * # Safety
 * `table` must be a live handle or NULL.
 */
size_t qp_table_columns(const QpTable *table);

/**
 * Column name, owned by the table; NULL if out of range.
 *
 * # Safety
 * `table` must be a live handle or NULL.
 */
const char *qp_table_column_name(const QpTable *table, size_t column);

/**
 * # Safety
 * `table` must be a live handle and `value` a valid pointer.
 */
QpStatus qp_table_get(const QpTable *table, size_t row, size_t column, double *value);

/**
 * Row-major values (rows × columns), owned by the table.
 *
 * # Safety
 * `table` must be a live handle or NULL.
 */
const double *qp_table_data(const QpTable *table);

/**
 * The table as CSV, as the command line writes it; free with
 * `qp_string_free`.
 *
 * # Safety
 * `table` must be a live handle or NULL.
 */
char *qp_table_csv(const QpTable *table);

/**
 * # Safety
 * `table` must come from a `qpulse` call, or be NULL.
 */
void qp_table_free(QpTable *table);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
QpStatus qp_record_load(const char *path, QpRecord **out);

/**
 * # Safety
 * `record` must be a live handle and `path` a NUL-terminated string.
 */
QpStatus qp_record_save(const QpRecord *record, const char *path);

/**
 * # Safety
 * `record` must be a live handle or NULL.
 */
size_t qp_record_steps(const QpRecord *record);

/**
 * Number of clicks (0 for homodyne records).
 *
 * # Safety
 * `record` must be a live handle or NULL.
 */
size_t qp_record_click_count(const QpRecord *record);

/**
 * # Safety
 * `record` must come from a `qpulse` call, or be NULL.
 */
void qp_record_free(QpRecord *record);

/**
 * A filter bank over the configured hypotheses, at t = 0.
 *
 * # Safety
 * `cfg` must be a live handle and `out` a valid pointer.
 */
QpStatus qp_filter_bank_new(const QpConfig *cfg, QpFilterBank **out);

/**
 * # Safety
 * `bank` must be a live handle or NULL.
 */
size_t qp_filter_bank_len(const QpFilterBank *bank);

/**
 * Advances one counting step (`clicked` nonzero for a detection).
 *
 * # Safety
 * `bank` must be a live handle.
 */
QpStatus qp_filter_bank_step_counting(QpFilterBank *bank, bool clicked);

/**
 * Advances one homodyne step with signal increment `dy`.
 *
 * # Safety
 * `bank` must be a live handle.
 */
QpStatus qp_filter_bank_step_homodyne(QpFilterBank *bank, double dy);

/**
 * Writes the current posteriors into `out[0..len]`; `len` must equal the
 * number of hypotheses.
 *
 * # Safety
 * `bank` must be a live handle and `out` point to `len` writable doubles.
 */
QpStatus qp_filter_bank_posteriors(const QpFilterBank *bank, double *out, size_t len);

/**
 * # Safety
 * `bank` must come from `qp_filter_bank_new`, or be NULL.
 */
void qp_filter_bank_free(QpFilterBank *bank);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QPULSE_H */
