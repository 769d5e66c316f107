/* sstoken shared-library API.
 *
 * C-callable surface over the token-selection laboratory: opaque handles,
 * integer status codes, UTF-8 strings. Every function returns SST_OK (0)
 * on success; on failure the return value names the error class and
 * sst_last_error() carries a human-readable message for the calling
 * thread.
 */
#ifndef SSTOKEN_H
#define SSTOKEN_H

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef struct sst_corpus sst_corpus;
typedef struct sst_model sst_model;

enum sst_status {
    SST_OK = 0,
    SST_ERR_IO = 1,
    SST_ERR_FORMAT = 2,
    SST_ERR_INVALID = 3,
    SST_ERR_SHAPE = 4,
    SST_ERR_INTERNAL = 5
};

const char* sst_version(void);

/* Message for the most recent failure on this thread; never NULL. */
const char* sst_last_error(void);

/* Frees strings returned through char** out-parameters. */
void sst_string_free(char* s);

/* Writes train.jsonl, heldout.jsonl and train.noise.jsonl (ground-truth
 * noise positions) under out_dir. The held-out split is clean. */
int sst_gen_corpus(const char* out_dir, long train_samples,
                   long heldout_samples, double noise_rate,
                   unsigned long long seed);

/* ---- corpus handles ---- */

int sst_corpus_open(const char* jsonl_path, long max_seq_len,
                    sst_corpus** out);
void sst_corpus_close(sst_corpus* corpus);
long sst_corpus_size(const sst_corpus* corpus);
long sst_corpus_skipped(const sst_corpus* corpus);

/* ---- model handles ---- */

int sst_model_load(const char* checkpoint_path, sst_model** out);
void sst_model_close(sst_model* model);
/* Model configuration as a JSON string; free with sst_string_free. */
int sst_model_config_json(const sst_model* model, char** out_json);

/* ---- experiment driver ---- */

/* Executes one training run from a JSON run configuration (see README for
 * the schema). Writes artifacts under <out_dir>/<run_id> and, when
 * run_dir_out is non-NULL, copies the run directory path into it
 * (truncated to run_dir_cap, always NUL-terminated). Completed runs are
 * skipped. */
int sst_run_json(const char* config_json, char* run_dir_out,
                 size_t run_dir_cap);
int sst_run_file(const char* config_path, char* run_dir_out,
                 size_t run_dir_cap);

/* Executes a sweep plan (JSON file): selector x gamma x rho x layer x seed
 * grid. Per-run failures are isolated; the plan continues. */
int sst_sweep_file(const char* plan_path);

/* Aggregates every run under runs_dir into a summary CSV. */
int sst_summarize(const char* runs_dir, const char* out_csv_path);

/* Renders one sample's token selection from a completed run directory as
 * an HTML document plus a plain-text fallback (either path may be NULL). */
int sst_render(const char* run_dir, long sample_index, const char* html_path,
               const char* text_path);

/* Scores one sample: current vs. history model, fused selection at the
 * given gamma/rho/layer. Returns a JSON object (rel/rel_norm/attn/fused
 * per token plus the mask) via out_json; free with sst_string_free. */
int sst_score_sample(const sst_model* current, const sst_model* history,
                     const sst_corpus* corpus, long sample_index, double gamma,
                     double rho, int attn_layer, char** out_json);

#ifdef __cplusplus
}
#endif

#endif /* SSTOKEN_H */
