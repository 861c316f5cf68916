#ifndef EVLOT_H
#define EVLOT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum EvlotStatus {
  EVLOT_STATUS_OK = 0,
  EVLOT_STATUS_NULL_POINTER = 1,
  EVLOT_STATUS_INVALID_ARGUMENT = 2,
  EVLOT_STATUS_IO = 3,
  EVLOT_STATUS_FORMAT = 4,
  EVLOT_STATUS_CONFIG = 5,
  EVLOT_STATUS_CONTRACT = 6,
  EVLOT_STATUS_SOLVER = 7,
  EVLOT_STATUS_PANIC = 8,
} EvlotStatus;

/**
 * A parking lot driven slot by slot from the host.
 */
typedef struct EvlotLot EvlotLot;

typedef struct EvlotModel EvlotModel;

typedef struct EvlotTariff EvlotTariff;

typedef struct EvlotTrace EvlotTrace;

/**
 * Run parameters. `forced_initial` is a fraction of `p_max_kw`; zero or
 * less means no forced initial charge.
 */
typedef struct EvlotConfig {
  double w1;
  double w2;
  double transformer_kw;
  double forced_initial;
  uint32_t n_scenarios;
  double e_del_min;
  bool relax_del_min;
  int32_t start_date;
  int32_t end_date;
  uint64_t rng_seed;
  uint32_t evse_count;
  double p_max_kw;
  double stay_cv;
  double e_old_seed_kw;
  bool detect_full;
} EvlotConfig;

typedef struct EvlotMetrics {
  double total_energy_kwh;
  double energy_cost_usd;
  double demand_charge_usd;
  double peak_kw;
  double midday_energy_kwh;
  uint64_t sessions;
  uint64_t rejected_arrivals;
  uint64_t infeasible_steps;
  bool feasible;
} EvlotMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer stays
 * valid until the next `evlot_*` call on the same thread.
 */
const char *evlot_last_error(void);

const char *evlot_version(void);

/**
 * Fills `out` with the library defaults.
 *
 * # Safety
 * `out` must be NULL or point to writable memory for one `EvlotConfig`.
 */
enum EvlotStatus evlot_config_default(struct EvlotConfig *out);

/**
 * Checks `cfg` the way a run would.
 *
 * # Safety
 * `cfg` must be NULL or point to a valid `EvlotConfig`.
 */
enum EvlotStatus evlot_config_validate(const struct EvlotConfig *cfg);

/**
 * The built-in tariff.
 *
 * # Safety
 * `out` must be NULL or point to writable storage for one pointer.
 */
enum EvlotStatus evlot_tariff_default(struct EvlotTariff **out);

/**
 * # Safety
 * `path` must be NULL or a NUL-terminated string; `out` as in
 * [`evlot_tariff_default`].
 */
enum EvlotStatus evlot_tariff_load(const char *path, struct EvlotTariff **out);

/**
 * # Safety
 * `t` must be NULL or a handle from this library not freed yet.
 */
void evlot_tariff_free(struct EvlotTariff *t);

/**
 * The built-in arrival model.
 *
 * # Safety
 * `out` must be NULL or point to writable storage for one pointer.
 */
enum EvlotStatus evlot_model_reference(struct EvlotModel **out);

/**
 * Loads a model file written by `evlot build-model`.
 *
 * # Safety
 * `path` must be NULL or a NUL-terminated string; `out` as in
 * [`evlot_model_reference`].
 */
enum EvlotStatus evlot_model_load(const char *path, struct EvlotModel **out);

/**
 * # Safety
 * `m` must be NULL or a handle from this library not freed yet.
 */
void evlot_model_free(struct EvlotModel *m);

/**
 * Parses a session CSV. Malformed rows are skipped and counted, see
 * [`evlot_trace_rejected`].
 *
 * # Safety
 * `path` must be NULL or a NUL-terminated string; `out` must be NULL or
 * point to writable storage for one pointer.
 */
enum EvlotStatus evlot_trace_load(const char *path, struct EvlotTrace **out);

/**
 * Samples a synthetic trace from `model` for the dates `[start, end]`.
 *
 * # Safety
 * `model` must be NULL or a live handle; `out` as in [`evlot_trace_load`].
 */
enum EvlotStatus evlot_trace_synthetic(const struct EvlotModel *model,
                                       int32_t start_date,
                                       int32_t end_date,
                                       uint64_t seed,
                                       struct EvlotTrace **out);

/**
 * Number of sessions, 0 for NULL.
 *
 * # Safety
 * `t` must be NULL or a live handle.
 */
size_t evlot_trace_len(const struct EvlotTrace *t);

/**
 * Rows skipped while loading, 0 for NULL.
 *
 * # Safety
 * `t` must be NULL or a live handle.
 */
size_t evlot_trace_rejected(const struct EvlotTrace *t);

/**
 * # Safety
 * `t` must be NULL or a handle from this library not freed yet.
 */
void evlot_trace_free(struct EvlotTrace *t);

/**
 * Closed-loop controlled run. An infeasible run is a result: the call
 * succeeds and `out->feasible` is false.
 *
 * # Safety
 * Pointers must be NULL or valid; handles must be live.
 */
enum EvlotStatus evlot_simulate(const struct EvlotConfig *cfg,
                                const struct EvlotTrace *trace,
                                const struct EvlotModel *model,
                                const struct EvlotTariff *tariff,
                                struct EvlotMetrics *out);

/**
 * Uncontrolled baseline: every EV charges at full power on arrival.
 *
 * # Safety
 * Pointers must be NULL or valid; handles must be live.
 */
enum EvlotStatus evlot_baseline(const struct EvlotConfig *cfg,
                                const struct EvlotTrace *trace,
                                const struct EvlotTariff *tariff,
                                struct EvlotMetrics *out);

/**
 * Creates a lot positioned at slot 0 of `cfg->start_date`. The model and
 * tariff are copied.
 *
 * # Safety
 * Pointers must be NULL or valid; `out` must point to storage for one
 * pointer.
 */
enum EvlotStatus evlot_lot_new(const struct EvlotConfig *cfg,
                               const struct EvlotModel *model,
                               const struct EvlotTariff *tariff,
                               struct EvlotLot **out);

/**
 * Moves to a later date. EVs still plugged in carry over.
 *
 * # Safety
 * `lot` must be NULL or a live handle.
 */
enum EvlotStatus evlot_lot_start_day(struct EvlotLot *lot, int32_t date);

/**
 * Plugs in an EV. `*evse_out` receives the EVSE index, or -1 when the lot
 * is full.
 *
 * # Safety
 * `lot` must be a live handle, `ev_ref` a NUL-terminated string and
 * `evse_out` writable.
 */
enum EvlotStatus evlot_lot_arrive(struct EvlotLot *lot,
                                  const char *ev_ref,
                                  uint32_t slot,
                                  int32_t *evse_out);

/**
 * Unplugs the EV at `evse`; `*delivered_kwh` (if not NULL) receives the
 * energy it got over the whole session.
 *
 * # Safety
 * `lot` must be a live handle; `delivered_kwh` NULL or writable.
 */
enum EvlotStatus evlot_lot_depart(struct EvlotLot *lot,
                                  uint32_t evse,
                                  uint32_t slot,
                                  double *delivered_kwh);

/**
 * Solves for `slot` and writes one setpoint in kW per EVSE into `kw_out`
 * (`len` must be at least the EVSE count; empty EVSEs get 0).
 * `*feasible` is false when the step had no feasible schedule.
 *
 * # Safety
 * `lot` must be a live handle, `kw_out` valid for `len` doubles and
 * `feasible` NULL or writable.
 */
enum EvlotStatus evlot_lot_step(struct EvlotLot *lot,
                                uint32_t slot,
                                double *kw_out,
                                size_t len,
                                bool *feasible);

/**
 * Records the energy actually delivered at `evse` in the current slot.
 * Less than the last setpoint marks the EV as full.
 *
 * # Safety
 * `lot` must be NULL or a live handle.
 */
enum EvlotStatus evlot_lot_commit(struct EvlotLot *lot, uint32_t evse, double delivered_kwh);

/**
 * Closes the current slot with the metered lot power.
 *
 * # Safety
 * `lot` must be NULL or a live handle.
 */
enum EvlotStatus evlot_lot_end_slot(struct EvlotLot *lot, double total_kw);

/**
 * EVs currently plugged in, 0 for NULL.
 *
 * # Safety
 * `lot` must be NULL or a live handle.
 */
size_t evlot_lot_plugged(const struct EvlotLot *lot);

/**
 * # Safety
 * `lot` must be NULL or a handle from this library not freed yet.
 */
void evlot_lot_free(struct EvlotLot *lot);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EVLOT_H */
