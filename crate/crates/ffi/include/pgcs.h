#ifndef PGCS_H
#define PGCS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PgcsStatus {
  PGCS_STATUS_OK = 0,
  PGCS_STATUS_NULL_POINTER = 1,
  PGCS_STATUS_INVALID_ARGUMENT = 2,
  PGCS_STATUS_PARSE = 3,
  PGCS_STATUS_VALIDATION = 4,
  PGCS_STATUS_NUMERICAL = 5,
  PGCS_STATUS_CHECKPOINT = 6,
  PGCS_STATUS_IO = 7,
  PGCS_STATUS_PANIC = 8,
} PgcsStatus;

/**
 * Labeled constellation.
 */
typedef struct PgcsConstellation PgcsConstellation;

/**
 * Trained mapper/demapper loaded from a checkpoint.
 */
typedef struct PgcsModel PgcsModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread; empty after a
 * success. Valid until the next call into this library on the thread.
 */
const char *pgcs_last_error_message(void);

/**
 * Library version as a static nul-terminated string.
 */
const char *pgcs_version(void);

/**
 * Noise standard deviation for an SNR in dB at unit symbol energy.
 */
double pgcs_snr_db_to_sigma_n(double snr_db);

/**
 * Per-symbol Wiener phase increment standard deviation.
 *
 * # Safety
 * `out` must be null or valid for a write.
 */
enum PgcsStatus pgcs_linewidth_to_sigma_phi(double linewidth_hz, double symbol_rate, double *out);

/**
 * Loads a training checkpoint.
 *
 * # Safety
 * `path` must be a nul-terminated string, `out` valid for a write.
 */
enum PgcsStatus pgcs_model_load(const char *path, struct PgcsModel **out);

/**
 * # Safety
 * `model` must be null or a handle from [`pgcs_model_load`] not yet freed.
 */
void pgcs_model_free(struct PgcsModel *model);

/**
 * Bits per symbol, 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
uint32_t pgcs_model_bits(const struct PgcsModel *model);

/**
 * Transmit constellation for the given channel condition.
 *
 * # Safety
 * `model` must be a live handle, `out` valid for a write.
 */
enum PgcsStatus pgcs_model_constellation(const struct PgcsModel *model,
                                         double snr_db,
                                         double linewidth_hz,
                                         struct PgcsConstellation **out);

/**
 * BMI in bits per symbol at one channel point with the hard BPS. Both ends
 * are conditioned on `snr_db + offset_db`.
 *
 * # Safety
 * `model` must be a live handle, `out_bmi` valid for a write.
 */
enum PgcsStatus pgcs_model_run_point(const struct PgcsModel *model,
                                     double snr_db,
                                     double linewidth_hz,
                                     double offset_db,
                                     size_t symbols,
                                     uint64_t seed,
                                     double *out_bmi);

/**
 * Unit-power Gray square QAM with `bits` bits per symbol.
 *
 * # Safety
 * `out` must be valid for a write.
 */
enum PgcsStatus pgcs_constellation_square_qam(uint32_t bits, struct PgcsConstellation **out);

/**
 * Builds a constellation from `order` points and labels.
 *
 * # Safety
 * `re`, `im` and `labels` must each point to `order` readable elements,
 * `out` must be valid for a write.
 */
enum PgcsStatus pgcs_constellation_new(uint32_t bits,
                                       const double *re,
                                       const double *im,
                                       const uint32_t *labels,
                                       size_t order,
                                       struct PgcsConstellation **out);

/**
 * Reads a constellation text file.
 *
 * # Safety
 * `path` must be a nul-terminated string, `out` valid for a write.
 */
enum PgcsStatus pgcs_constellation_read(const char *path, struct PgcsConstellation **out);

/**
 * Writes a constellation text file.
 *
 * # Safety
 * `c` must be a live handle and `path` a nul-terminated string.
 */
enum PgcsStatus pgcs_constellation_write(const struct PgcsConstellation *c, const char *path);

/**
 * Number of points, 0 for a null handle.
 *
 * # Safety
 * `c` must be null or a live handle.
 */
size_t pgcs_constellation_order(const struct PgcsConstellation *c);

/**
 * Bits per symbol, 0 for a null handle.
 *
 * # Safety
 * `c` must be null or a live handle.
 */
uint32_t pgcs_constellation_bits(const struct PgcsConstellation *c);

/**
 * Copies points and labels into caller buffers of length `len`, which
 * must equal the constellation order. Any of the three may be null.
 *
 * # Safety
 * `c` must be a live handle; non-null buffers must hold `len` elements.
 */
enum PgcsStatus pgcs_constellation_copy(const struct PgcsConstellation *c,
                                        double *re,
                                        double *im,
                                        uint32_t *labels,
                                        size_t len);

/**
 * # Safety
 * `c` must be null or a handle not yet freed.
 */
void pgcs_constellation_free(struct PgcsConstellation *c);

/**
 * Hard blind phase search of `len` received symbols. Writes the decided
 * angle per symbol to `theta_out` and, if non-null, the de-rotated symbols
 * to `re_out`/`im_out`.
 *
 * # Safety
 * `c` must be a live handle; `z_re`, `z_im` and `theta_out` must hold
 * `len` elements, as must `re_out`/`im_out` when non-null.
 */
enum PgcsStatus pgcs_bps_hard(const struct PgcsConstellation *c,
                              const double *z_re,
                              const double *z_im,
                              size_t len,
                              size_t num_test_angles,
                              size_t window_size,
                              double angle_min,
                              double angle_max,
                              double *theta_out,
                              double *re_out,
                              double *im_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PGCS_H */
