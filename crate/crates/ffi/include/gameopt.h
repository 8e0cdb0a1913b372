#ifndef GAMEOPT_H
#define GAMEOPT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Node fields of a solved quote.
 */
typedef enum GameoptField {
  GAMEOPT_FIELD_Y = 0,
  GAMEOPT_FIELD_Z = 1,
  GAMEOPT_FIELD_DL = 2,
  GAMEOPT_FIELD_DU = 3,
} GameoptField;

/**
 * Stopping regions of a quote, named as for the hedger: sigma is cancellation.
 */
typedef enum GameoptRegion {
  GAMEOPT_REGION_SIGMA = 0,
  GAMEOPT_REGION_TAU = 1,
  GAMEOPT_REGION_BAR_SIGMA = 2,
  GAMEOPT_REGION_BAR_TAU = 3,
} GameoptRegion;

typedef enum GameoptSide {
  GAMEOPT_SIDE_HEDGER = 0,
  GAMEOPT_SIDE_COUNTERPARTY = 1,
} GameoptSide;

/**
 * Status codes; the non-zero values match the command-line exit codes.
 */
typedef enum GameoptStatus {
  GAMEOPT_STATUS_OK = 0,
  /**
   * Null pointer, wrong buffer length or unknown enum value.
   */
  GAMEOPT_STATUS_INVALID_ARGUMENT = 1,
  GAMEOPT_STATUS_CONFIG = 2,
  GAMEOPT_STATUS_SOLVER = 3,
  GAMEOPT_STATUS_TOO_LARGE = 4,
  /**
   * A verification ran but did not pass.
   */
  GAMEOPT_STATUS_CHECK_FAILED = 5,
  GAMEOPT_STATUS_PANIC = 99,
} GameoptStatus;

typedef struct GameoptContract GameoptContract;

typedef struct GameoptGenerator GameoptGenerator;

typedef struct GameoptLattice GameoptLattice;

typedef struct GameoptQuote GameoptQuote;

typedef struct GameoptOracleReport {
  double upper_value;
  double lower_value;
  double y0;
  bool matches_upper;
  bool has_value;
  uint64_t rule_count;
} GameoptOracleReport;

typedef struct GameoptReplicationReport {
  bool replicates;
  double max_gap;
  bool ao_at_plus;
  bool sh_fails_at_minus;
  uint64_t n_paths;
  /**
   * `-1` when every path passed.
   */
  int64_t first_failing_path;
} GameoptReplicationReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null. Valid until the next failing call.
 */
const char *gameopt_last_error(void);

/**
 * Number of lattice nodes of a `steps`-step tree, the length of every node buffer.
 */
size_t gameopt_node_count(size_t steps);

/**
 * Binomial lattice with explicit up and down factors.
 */
enum GameoptStatus gameopt_lattice_new(double s0,
                                       double up,
                                       double down,
                                       double horizon,
                                       size_t steps,
                                       struct GameoptLattice **out);

/**
 * Binomial lattice with `u = exp(vol * sqrt(dt))`, `d = 1/u`.
 */
enum GameoptStatus gameopt_lattice_from_volatility(double s0,
                                                   double vol,
                                                   double horizon,
                                                   size_t steps,
                                                   struct GameoptLattice **out);

size_t gameopt_lattice_steps(const struct GameoptLattice *lattice);

void gameopt_lattice_free(struct GameoptLattice *lattice);

enum GameoptStatus gameopt_generator_zero(struct GameoptGenerator **out);

enum GameoptStatus gameopt_generator_linear(double r, struct GameoptGenerator **out);

enum GameoptStatus gameopt_generator_differential(double r_lend,
                                                  double r_borrow,
                                                  struct GameoptGenerator **out);

void gameopt_generator_free(struct GameoptGenerator *generator);

enum GameoptStatus gameopt_contract_israeli_put(const struct GameoptLattice *lattice,
                                                double strike,
                                                double penalty,
                                                struct GameoptContract **out);

enum GameoptStatus gameopt_contract_game_bond(const struct GameoptLattice *lattice,
                                              double face,
                                              double coupon,
                                              double call_penalty,
                                              double put_discount,
                                              struct GameoptContract **out);

/**
 * Custom contract from node buffers of length `gameopt_node_count(steps)`, ordered by step
 * then up-count. `da` may be null for no cashflow.
 */
enum GameoptStatus gameopt_contract_from_nodes(size_t steps,
                                               const double *xh,
                                               const double *xc,
                                               const double *xbar,
                                               const double *da,
                                               struct GameoptContract **out);

void gameopt_contract_free(struct GameoptContract *contract);

/**
 * Acceptable price of `side` (a [`GameoptSide`] value) with the given endowment and benchmark account rates.
 */
enum GameoptStatus gameopt_quote(const struct GameoptContract *contract,
                                 const struct GameoptLattice *lattice,
                                 const struct GameoptGenerator *generator,
                                 uint32_t side,
                                 double endowment,
                                 double r_lend,
                                 double r_borrow,
                                 struct GameoptQuote **out);

/**
 * Acceptable price, or NaN for a null handle.
 */
double gameopt_quote_price(const struct GameoptQuote *quote);

/**
 * Root value of the solved equation, or NaN for a null handle.
 */
double gameopt_quote_y0(const struct GameoptQuote *quote);

/**
 * Copies a node field (a [`GameoptField`] value) into `buf`, which must hold exactly `gameopt_node_count(steps)` values.
 */
enum GameoptStatus gameopt_quote_field(const struct GameoptQuote *quote,
                                       uint32_t field,
                                       double *buf,
                                       size_t len);

/**
 * Writes 1 for nodes of `region` (a [`GameoptRegion`] value) and 0 otherwise into `buf` of length `gameopt_node_count(steps)`.
 */
enum GameoptStatus gameopt_quote_region(const struct GameoptQuote *quote,
                                        uint32_t region,
                                        uint8_t *buf,
                                        size_t len);

void gameopt_quote_free(struct GameoptQuote *quote);

/**
 * Brute-force game values of the quote's obstacle problem. Returns `CHECK_FAILED` (with the
 * report filled in) when the root value does not match the upper value within `tol`.
 */
enum GameoptStatus gameopt_oracle(const struct GameoptQuote *quote,
                                  double tol,
                                  struct GameoptOracleReport *out);

/**
 * Forward replication and price probes. Returns `CHECK_FAILED` (with the report filled in)
 * when any check fails.
 */
enum GameoptStatus gameopt_replicate(const struct GameoptQuote *quote,
                                     double tol,
                                     struct GameoptReplicationReport *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GAMEOPT_H */
