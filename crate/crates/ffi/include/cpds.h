#ifndef CPDS_H
#define CPDS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CpdsStatus {
  CPDS_STATUS_OK = 0,
  CPDS_STATUS_INTERNAL = 1,
  CPDS_STATUS_CONFIG = 2,
  CPDS_STATUS_EMPTY = 3,
  CPDS_STATUS_INDETERMINATE = 4,
  CPDS_STATUS_NULL_POINTER = 5,
  CPDS_STATUS_PANIC = 6,
} CpdsStatus;

typedef enum CpdsConcept {
  CPDS_CONCEPT_PSNE = 0,
  CPDS_CONCEPT_MIXED2X2 = 1,
  CPDS_CONCEPT_CE = 2,
} CpdsConcept;

/**
 * A finite normal-form game.
 */
typedef struct CpdsGame CpdsGame;

/**
 * A solution set with its enumerated extreme points.
 */
typedef struct CpdsSolutionSet CpdsSolutionSet;

/**
 * A parsed counterfactual specification.
 */
typedef struct CpdsSpec CpdsSpec;

/**
 * Engine settings; a null pointer means Monte Carlo, strict emptiness, 64 partitions.
 */
typedef struct CpdsEngineOptions {
  bool exact;
  bool record_empty;
  size_t partitions;
} CpdsEngineOptions;

/**
 * Integrated bounds. Event fields are NaN when the spec has no events, and all
 * expectation fields are NaN when every draw was excluded.
 */
typedef struct CpdsPartialCpds {
  double e_sup;
  double e_inf;
  double p_could;
  double p_must;
  double p_cannot;
  double se_e_sup;
  double se_e_inf;
  double se_p_could;
  double se_p_must;
  double se_p_cannot;
  uint64_t n_draws;
  uint64_t excluded_draws;
  uint64_t indeterminate_draws;
  uint64_t knife_edge_draws;
} CpdsPartialCpds;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *cpds_version(void);

/**
 * Message of the last failed call on this thread, or null. Valid until the next
 * call into the library from the same thread.
 */
const char *cpds_last_error_message(void);

/**
 * Parses a game file body (`tensor` or `linear_entry`).
 */
enum CpdsStatus cpds_game_from_json(const char *json, struct CpdsGame **out);

/**
 * Builds a game from action counts and a player-major utility array of length
 * `num_players * num_profiles`.
 */
enum CpdsStatus cpds_game_from_tensor(const size_t *sizes,
                                      size_t num_players,
                                      const double *utility,
                                      size_t utility_len,
                                      struct CpdsGame **out);

void cpds_game_free(struct CpdsGame *game);

enum CpdsStatus cpds_game_num_profiles(const struct CpdsGame *game, size_t *out);

enum CpdsStatus cpds_game_payoff(const struct CpdsGame *game,
                                 size_t player,
                                 size_t profile,
                                 double *out);

/**
 * Solution set of `game` under `concept` (a [`CpdsConcept`] code).
 */
enum CpdsStatus cpds_solve(const struct CpdsGame *game, int concept, struct CpdsSolutionSet **out);

void cpds_solution_set_free(struct CpdsSolutionSet *set);

/**
 * Number of extreme points (solutions, for finite sets).
 */
enum CpdsStatus cpds_solution_set_num_vertices(const struct CpdsSolutionSet *set, size_t *out);

/**
 * Copies vertex `index` into `out`, which must hold `len` = number of profiles.
 */
enum CpdsStatus cpds_solution_set_vertex(const struct CpdsSolutionSet *set,
                                         size_t index,
                                         double *out,
                                         size_t len);

/**
 * Optimizes `coeffs . s` over the set. `argopt` may be null; otherwise it receives
 * `len` probabilities.
 */
enum CpdsStatus cpds_maximize(const struct CpdsSolutionSet *set,
                              const double *coeffs,
                              size_t len,
                              bool maximize,
                              double *value,
                              double *argopt);

/**
 * Smallest and largest outcome over the solution set of one game. `outcome_json`
 * is an outcome such as `"expected_entrants"`.
 */
enum CpdsStatus cpds_draw_bounds(const struct CpdsGame *game,
                                 int concept,
                                 const char *outcome_json,
                                 double *lo,
                                 double *hi);

enum CpdsStatus cpds_spec_from_json(const char *json, struct CpdsSpec **out);

void cpds_spec_free(struct CpdsSpec *spec);

/**
 * Bounds and event probabilities at `theta`. `options` may be null.
 */
enum CpdsStatus cpds_partial_cpds(const struct CpdsSpec *spec,
                                  const double *theta,
                                  size_t theta_len,
                                  uint64_t n,
                                  uint64_t seed,
                                  const struct CpdsEngineOptions *options,
                                  struct CpdsPartialCpds *out);

/**
 * Mean lower and upper endpoint of `len` intervals.
 */
enum CpdsStatus cpds_estimated_set(const double *lo,
                                   const double *hi,
                                   size_t len,
                                   double *out_lo,
                                   double *out_hi);

/**
 * Envelope of the narrowest `ceil(level * len)` intervals.
 */
enum CpdsStatus cpds_credible_set(const double *lo,
                                  const double *hi,
                                  size_t len,
                                  double level,
                                  double *out_lo,
                                  double *out_hi);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CPDS_H */
