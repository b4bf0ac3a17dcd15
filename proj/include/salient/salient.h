#ifndef SALIENT_SALIENT_H
#define SALIENT_SALIENT_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#  define SALIENT_API __declspec(dllexport)
#else
#  define SALIENT_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Every call returns a status; on failure salient_last_error() holds a
   one-line diagnostic for the calling thread until its next call. */
typedef enum salient_status {
  SALIENT_OK = 0,
  SALIENT_ERR_USAGE = 1,
  SALIENT_ERR_CONFIG = 2,
  SALIENT_ERR_SHAPE = 3,
  SALIENT_ERR_CAPACITY = 4,
  SALIENT_ERR_INDEX = 5,
  SALIENT_ERR_SEGMENT = 6,
  SALIENT_ERR_VALIDATION = 7,
  SALIENT_ERR_PARSE = 8,
  SALIENT_ERR_IO = 9,
  SALIENT_ERR_DEGENERATE = 10,
  SALIENT_ERR_DIVERGENCE = 11,
  SALIENT_ERR_INTERNAL = 12
} salient_status;

typedef enum salient_split { SALIENT_SPLIT_TRAIN = 0, SALIENT_SPLIT_TEST = 1 } salient_split;

typedef enum salient_eval_kind {
  SALIENT_EVAL_FAITHFULNESS = 0, /* deletion / insertion curves plus pointing game */
  SALIENT_EVAL_PG = 1,           /* pointing game and energy-PG only */
  SALIENT_EVAL_COUNTERFACTUAL = 2
} salient_eval_kind;

typedef struct salient_dataset salient_dataset;
typedef struct salient_model salient_model;

/* One JSON object per call, no trailing newline. */
typedef void (*salient_log_fn)(const char* json_line, void* user);
typedef void (*salient_checkpoint_fn)(size_t step, const salient_model* policy, void* user);

SALIENT_API const char* salient_version(void);
SALIENT_API const char* salient_last_error(void);
SALIENT_API const char* salient_status_name(salient_status status);

/* Strings and buffers handed out by the library. */
SALIENT_API void salient_string_free(char* s);
SALIENT_API void salient_buffer_free(unsigned char* b);

/* config_json may be NULL or "" for all defaults. */
SALIENT_API salient_status salient_config_resolve(const char* config_json, char** out_json);

SALIENT_API salient_status salient_dataset_generate(const char* config_json, uint64_t seed,
                                                    salient_dataset** out);
SALIENT_API salient_status salient_dataset_read(const char* dir, salient_dataset** out);
SALIENT_API salient_status salient_dataset_write(const salient_dataset* ds, const char* dir);
SALIENT_API salient_status salient_dataset_count(const salient_dataset* ds, salient_split split,
                                                 size_t* out);
/* Copies up to capacity ids of the split into ids; *count gets the split size. */
SALIENT_API salient_status salient_dataset_ids(const salient_dataset* ds, salient_split split,
                                               uint64_t* ids, size_t capacity, size_t* count);
SALIENT_API void salient_dataset_free(salient_dataset* ds);

SALIENT_API salient_status salient_model_init(const char* config_json, uint64_t seed,
                                              salient_model** out);
SALIENT_API salient_status salient_model_read(const char* path, salient_model** out);
SALIENT_API salient_status salient_model_write(const salient_model* model, const char* path);
SALIENT_API salient_status salient_model_equal(const salient_model* a, const salient_model* b,
                                               int* out);
SALIENT_API salient_status salient_model_clone(const salient_model* model, salient_model** out);
SALIENT_API void salient_model_free(salient_model* model);

/* Supervised warm-up on scripted responses, in place. */
SALIENT_API salient_status salient_warmup(salient_model* model, const salient_dataset* ds,
                                          const char* config_json, uint64_t seed,
                                          salient_log_fn log, void* user);

/* GRPO from a warm-up checkpoint, which also serves as the frozen reference.
   The trained policy is returned in *out; `warm` is untouched. */
SALIENT_API salient_status salient_train_grpo(const salient_model* warm, const salient_dataset* ds,
                                              const char* config_json, uint64_t seed,
                                              salient_log_fn log, salient_checkpoint_fn checkpoint,
                                              void* user, salient_model** out);

/* Report as JSON and CSV text. */
SALIENT_API salient_status salient_evaluate(const salient_model* model, const salient_dataset* ds,
                                            salient_eval_kind kind, const char* config_json,
                                            uint64_t seed, char** report_json, char** report_csv);

/* Greedy response and holistic saliency for one sample. Any output pointer
   may be NULL. heatmap_ppm is the overlay render, map_pgm the raw grid
   scaled to the image size. */
SALIENT_API salient_status salient_explain(const salient_model* model, const salient_dataset* ds,
                                           uint64_t sample_id, char** response_text,
                                           char** saliency_json, unsigned char** heatmap_ppm,
                                           size_t* heatmap_len, unsigned char** map_pgm,
                                           size_t* map_len);

#ifdef __cplusplus
}
#endif

#endif
