/* C ABI for the fedpref simulator.
 *
 * Maintained alongside crates/ffi/src/lib.rs; regenerate with
 * `cbindgen --config cbindgen.toml --crate fedpref-ffi --output include/fedpref.h`
 * when the surface changes.
 *
 * Every fallible function returns a FedprefStatus; on failure,
 * fedpref_last_error_message() describes the error (thread-local, valid
 * until the next failing call on the same thread). Handles are opaque and
 * owned by the library; each *_free accepts NULL.
 */

#ifndef FEDPREF_H
#define FEDPREF_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible entry point.
 */
typedef enum FedprefStatus {
  FEDPREF_STATUS_OK = 0,
  FEDPREF_STATUS_IO_ERROR = 1,
  FEDPREF_STATUS_PARSE_ERROR = 2,
  FEDPREF_STATUS_DOMAIN_ERROR = 3,
  FEDPREF_STATUS_NUMERIC_ERROR = 4,
  FEDPREF_STATUS_NULL_ARGUMENT = 5,
  FEDPREF_STATUS_INVALID_UTF8 = 6,
  FEDPREF_STATUS_INTERNAL = 7,
} FedprefStatus;

/**
 * Opaque dataset handle.
 */
typedef struct FedprefDataset FedprefDataset;

/**
 * Opaque model handle.
 */
typedef struct FedprefModel FedprefModel;

/**
 * Opaque population handle: clients with labels derived from the training
 * split they were created against.
 */
typedef struct FedprefPopulation FedprefPopulation;

/**
 * Plain-old-data run configuration. `clients_per_round` 0 means full
 * participation.
 */
typedef struct FedprefConfig {
  uint64_t rounds;
  uint64_t clients_per_round;
  uint64_t local_epochs;
  uint64_t batch_size;
  double learning_rate;
  uint64_t seed;
  uint64_t feature_dim;
  uint64_t hash_seed;
  bool clamp_degenerate_priors;
  bool both_classes_loss;
} FedprefConfig;

#ifdef __cplusplus
extern "C" {
#endif  // __cplusplus

/**
 * Library version as a static string.
 */
const char *fedpref_version(void);

/**
 * Message describing the most recent error on this thread. Valid until
 * the next failing call on the same thread.
 */
const char *fedpref_last_error_message(void);

/**
 * Fill `out` with the default run configuration.
 */
FedprefStatus fedpref_config_default(FedprefConfig *out);

/**
 * Load a dataset from a CSV file (or a JSON cache when the path ends in
 * `.json`).
 */
FedprefStatus fedpref_dataset_load(const char *path, FedprefDataset **out);

/**
 * Number of records, 0 for a null handle.
 */
size_t fedpref_dataset_len(const FedprefDataset *dataset);

/**
 * Mean/min/max of the records' mean ratings. Null metric pointers are
 * skipped.
 */
FedprefStatus fedpref_dataset_stats(const FedprefDataset *dataset,
                                    double *mean,
                                    double *min,
                                    double *max);

void fedpref_dataset_free(FedprefDataset *dataset);

/**
 * Build a population of `n` clients with the given preference thresholds;
 * betas follow the default policy, labels and priors come from `train`.
 */
FedprefStatus fedpref_population_create(const double *alphas,
                                        size_t n,
                                        const FedprefDataset *train,
                                        bool clamp_degenerate_priors,
                                        FedprefPopulation **out);

/**
 * Number of clients, 0 for a null handle.
 */
size_t fedpref_population_len(const FedprefPopulation *population);

void fedpref_population_free(FedprefPopulation *population);

/**
 * Run federated training of the population on `train` and return the
 * final global model.
 */
FedprefStatus fedpref_train(const FedprefDataset *train,
                            const FedprefPopulation *population,
                            const FedprefConfig *config,
                            FedprefModel **out);

/**
 * Evaluate a model over the population on `eval_data` with per-client
 * rescaling; writes the overall macro precision/recall/F1 (fractions in
 * [0, 1]) into any non-null metric pointers.
 */
FedprefStatus fedpref_evaluate(const FedprefModel *model,
                               const FedprefPopulation *population,
                               const FedprefDataset *eval_data,
                               const FedprefConfig *config,
                               double *precision,
                               double *recall,
                               double *f1);

FedprefStatus fedpref_model_save(const FedprefModel *model, const char *path);

FedprefStatus fedpref_model_load(const char *path, FedprefModel **out);

void fedpref_model_free(FedprefModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  // FEDPREF_H
