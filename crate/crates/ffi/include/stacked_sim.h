/* SPDX-License-Identifier: Apache-2.0 */

#ifndef STACKED_SIM_H
#define STACKED_SIM_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SimExperimentKind {
  SIM_EXPERIMENT_KIND_SUMRATE = 0,
  SIM_EXPERIMENT_KIND_DOA = 1,
} SimExperimentKind;

typedef enum SimStatus {
  SIM_STATUS_OK = 0,
  SIM_STATUS_NULL_POINTER = 1,
  SIM_STATUS_INVALID_ARGUMENT = 2,
  SIM_STATUS_INVALID_CONFIG = 3,
  SIM_STATUS_DIMENSION_MISMATCH = 4,
  SIM_STATUS_NUMERICAL = 5,
  SIM_STATUS_IO = 6,
  SIM_STATUS_PANIC = 7,
} SimStatus;

// A resolved experiment description.
typedef struct SimExperiment SimExperiment;

// Rows produced by [`sim_experiment_run`].
typedef struct SimResults SimResults;

// Inter-layer transfer matrices of one SIM.
typedef struct SimStack SimStack;

// Hardware description. Fill with [`sim_config_default`] and adjust.
typedef struct SimHardware {
  double carrier_frequency;
  size_t num_layers;
  size_t atoms_per_layer;
  size_t num_antennas;
  size_t num_users;
  double sim_thickness;
  double element_spacing;
  double atom_area;
  double bs_height;
  // 0 for continuous phases, otherwise the number of levels.
  uint32_t phase_levels;
} SimHardware;

// One result row. `scheme` and `metric` point into the owning results
// object and stay valid until it is freed.
typedef struct SimResultRow {
  size_t layers;
  const char *scheme;
  const char *metric;
  double mean;
  double stderr;
  size_t trials;
  double seconds;
} SimResultRow;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL. The pointer is
// valid until the next call into this library on the same thread.
const char *sim_last_error_message(void);

// Frees a string returned by this library.
//
// # Safety
// `s` must come from this library and not have been freed.
void sim_string_free(char *s);

// Library version as a static string.
const char *sim_version(void);

// Default hardware for the given carrier and sizes.
//
// # Safety
// `out` must point to writable memory for one `SimHardware`.
enum SimStatus sim_config_default(double carrier_frequency,
                                  size_t num_layers,
                                  size_t atoms_per_layer,
                                  size_t num_antennas,
                                  size_t num_users,
                                  struct SimHardware *out);

// Builds the geometry and transfer matrices for `config`.
//
// # Safety
// `config` must be valid to read; `out` must be writable.
enum SimStatus sim_stack_new(const struct SimHardware *config, struct SimStack **out);

// # Safety
// `stack` must come from [`sim_stack_new`] and not have been freed.
void sim_stack_free(struct SimStack *stack);

// # Safety
// `stack` must be a live handle; the out pointers must be writable.
enum SimStatus sim_stack_dims(const struct SimStack *stack,
                              size_t *layers,
                              size_t *atoms,
                              size_t *antennas);

// End-to-end response `G` (atoms x antennas) for `layers * atoms` phases
// in layer-major order.
//
// # Safety
// `phases` must hold `num_phases` doubles and `out` `out_len` doubles.
enum SimStatus sim_stack_response(const struct SimStack *stack,
                                  const double *phases,
                                  size_t num_phases,
                                  double *out,
                                  size_t out_len);

// Sum-rate in bps/Hz of the `users x users` effective matrix `b`.
//
// # Safety
// `b` must hold `2 * users * users` doubles, `powers` `users` doubles.
enum SimStatus sim_sum_rate(const double *b,
                            size_t users,
                            const double *powers,
                            double noise,
                            double *out);

// Gradient of the sum-rate with respect to every phase.
//
// # Safety
// `phases` and `grad` hold `layers * atoms` doubles, `h` holds
// `2 * users * atoms` doubles and `powers` `users` doubles.
enum SimStatus sim_sumrate_gradient(const struct SimStack *stack,
                                    const double *phases,
                                    const double *h,
                                    size_t users,
                                    const double *powers,
                                    double noise,
                                    double *grad);

// One water-filling step over `k` channels.
//
// # Safety
// `gains`, `interference` and `out` each hold `k` doubles.
enum SimStatus sim_waterfill(const double *gains,
                             const double *interference,
                             size_t k,
                             double noise,
                             double budget,
                             double *out);

// Column-normalized zero-forcing precoder (`antennas x users`) for the
// `users x antennas` channel `h`.
//
// # Safety
// `h` and `out` each hold `2 * users * antennas` doubles.
enum SimStatus sim_zf_precoder(const double *h, size_t users, size_t antennas, double *out);

// Normalized-energy classification loss for one readout.
//
// # Safety
// `energies` holds 4 doubles; `out` is writable.
enum SimStatus sim_doa_loss(const double *energies, size_t target_antenna, double *out);

// Parses a TOML experiment description (empty text gives the defaults).
//
// # Safety
// `toml` must be a NUL-terminated string; `out` must be writable.
enum SimStatus sim_experiment_from_toml(enum SimExperimentKind kind,
                                        const char *toml,
                                        struct SimExperiment **out);

// # Safety
// `exp` must come from [`sim_experiment_from_toml`] and not have been freed.
void sim_experiment_free(struct SimExperiment *exp);

// Resolved experiment as TOML; release with [`sim_string_free`].
//
// # Safety
// `exp` must be a live handle; `out` must be writable.
enum SimStatus sim_experiment_to_toml(const struct SimExperiment *exp, char **out);

// Runs the experiment on `threads` workers (0 = all cores).
//
// # Safety
// `exp` must be a live handle; `out` must be writable.
enum SimStatus sim_experiment_run(const struct SimExperiment *exp,
                                  size_t threads,
                                  struct SimResults **out);

// # Safety
// `results` must come from [`sim_experiment_run`] and not have been freed.
void sim_results_free(struct SimResults *results);

// Number of rows, or 0 for NULL.
//
// # Safety
// `results` must be NULL or a live handle.
size_t sim_results_len(const struct SimResults *results);

// # Safety
// `results` must be a live handle; `out` must be writable.
enum SimStatus sim_results_row(const struct SimResults *results,
                               size_t index,
                               struct SimResultRow *out);

// Rows as CSV text; release with [`sim_string_free`].
//
// # Safety
// `results` must be a live handle; `out` must be writable.
enum SimStatus sim_results_to_csv(const struct SimResults *results, char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STACKED_SIM_H */
