#ifndef UNISIM_H
#define UNISIM_H

/* C interface to the unisim core. All entry points are synchronous and
 * thread-compatible (one context per thread). Functions returning int use
 * unisim_status codes; on failure the context holds a message retrievable
 * with unisim_last_error until the next call on that context. */

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define UNISIM_API __declspec(dllexport)
#else
#define UNISIM_API __attribute__((visibility("default")))
#endif

typedef enum {
    UNISIM_OK = 0,
    UNISIM_ERR_RUNTIME = 1, /* evaluation/training/io failure */
    UNISIM_ERR_CONFIG = 2,  /* bad config file or arguments */
    UNISIM_ERR_PARTIAL = 3  /* run finished with quarantined dataset failures */
} unisim_status;

typedef struct unisim_ctx unisim_ctx;

UNISIM_API unisim_ctx* unisim_ctx_new(void);
UNISIM_API void unisim_ctx_free(unisim_ctx* ctx);

/* Message for the most recent failed call on ctx; empty string if none.
 * The pointer stays valid until the next call on the same context. */
UNISIM_API const char* unisim_last_error(const unisim_ctx* ctx);

/* Version string of the library, static storage. */
UNISIM_API const char* unisim_version(void);

/* Ingest one dataset's raw annotations into canonical JSONL + manifest.
 * out_count (optional) receives the emitted sample count. */
UNISIM_API int unisim_ingest(unisim_ctx* ctx, const char* dataset, const char* raw_dir,
                             const char* out_dir, uint64_t seed, size_t* out_count);

/* Run the benchmark described by a JSON config file. backend_filter and
 * task_filter may be NULL or empty to keep everything. Returns
 * UNISIM_ERR_PARTIAL when the run completed but some datasets failed. */
UNISIM_API int unisim_eval(unisim_ctx* ctx, const char* config_path, const char* backend_filter,
                           const char* task_filter);

/* Toy metric-training run driven by a JSON config file (hyperparameters plus
 * task data paths and an output directory for the checkpoint). */
UNISIM_API int unisim_train(unisim_ctx* ctx, const char* config_path);

/* N-way forced-choice sweep over a ranked-groups annotation file, accuracy
 * per N written as CSV to out_csv. backend_spec as in the eval config
 * (e.g. "vector:8", "hash:16"). */
UNISIM_API int unisim_nafc(unisim_ctx* ctx, const char* groups_path, const char* backend_spec,
                           int n_min, int n_max, uint64_t seed, const char* out_csv);

/* Re-render a finished run's report in one of: "json", "csv", "radar".
 * On success *out receives a heap string; release with unisim_string_free. */
UNISIM_API int unisim_report_render(unisim_ctx* ctx, const char* run_dir, const char* format,
                                    char** out);
UNISIM_API void unisim_string_free(char* s);

/* Fine-grained helpers for external tooling. */
UNISIM_API int unisim_cosine(const double* u, const double* v, size_t dim, double* out);
UNISIM_API int unisim_hinge_loss(double s0, double s1, int y, double mu, double* out);
UNISIM_API int unisim_decide_nafc(const double* scores, size_t n, int* out_index);

#ifdef __cplusplus
}
#endif

#endif /* UNISIM_H */
