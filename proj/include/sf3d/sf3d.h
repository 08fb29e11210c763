/* C interface to the sf3d library. Every function returns an sf3d_status;
 * on failure sf3d_last_error() holds a one-line message for the calling
 * thread. Strings handed out by the library are released with
 * sf3d_string_free, handles with their matching *_free function. */
#ifndef SF3D_H
#define SF3D_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define SF3D_API __declspec(dllexport)
#else
#define SF3D_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum sf3d_status {
    SF3D_OK = 0,
    SF3D_ERR_INVALID_ARGUMENT = 1,
    SF3D_ERR_SHAPE_MISMATCH = 2,
    SF3D_ERR_INVALID_GROUPS = 3,
    SF3D_ERR_NOT_SCALAR = 4,
    SF3D_ERR_DISCONNECTED_TAPE = 5,
    SF3D_ERR_REDUCTION_INDIVISIBLE = 6,
    SF3D_ERR_INDIVISIBLE_EXTENT = 7,
    SF3D_ERR_LABEL_OUT_OF_RANGE = 8,
    SF3D_ERR_IO = 9,
    SF3D_ERR_FORMAT = 10,
    SF3D_ERR_NON_FINITE_LOSS = 11,
    SF3D_ERR_INVALID_CONFIG = 12,
    SF3D_ERR_INTERNAL = 100
} sf3d_status;

typedef struct sf3d_config sf3d_config;
typedef struct sf3d_model sf3d_model;

SF3D_API const char* sf3d_version(void);
SF3D_API const char* sf3d_status_name(sf3d_status status);
/* Message of the last failed call on this thread ("" if none). */
SF3D_API const char* sf3d_last_error(void);
SF3D_API void sf3d_string_free(char* s);

/* Run configuration: flat JSON with dotted keys, see sf3d_config_to_json. */
SF3D_API sf3d_status sf3d_config_default(sf3d_config** out);
SF3D_API sf3d_status sf3d_config_load(const char* path, sf3d_config** out);
/* "key=value"; the value is JSON, or a bare string. Only the key and the
 * value type are checked here; every operation taking a config validates
 * the whole of it first (SF3D_ERR_INVALID_CONFIG). */
SF3D_API sf3d_status sf3d_config_set(sf3d_config* cfg, const char* assignment);
SF3D_API sf3d_status sf3d_config_to_json(const sf3d_config* cfg, char** json);
SF3D_API void sf3d_config_free(sf3d_config* cfg);

/* Validates the config and returns the first problem, if any. */
SF3D_API sf3d_status sf3d_config_validate(const sf3d_config* cfg);

/* Writes samples [first_index, first_index + count) and index.json into dir. */
SF3D_API sf3d_status sf3d_generate_dataset(const sf3d_config* cfg, const char* dir, int64_t first_index, int64_t count);

/* Receives one metrics-log JSON line per epoch. */
typedef void (*sf3d_epoch_fn)(const char* json_line, void* user);
/* Trains per cfg, writing metrics.jsonl, run.json and checkpoints/ under the
 * configured output directory. summary (optional) receives
 * {"steps", "final": {loss, dice_per_class, mean_dice}, "out_dir"}. */
SF3D_API sf3d_status sf3d_train(const sf3d_config* cfg, sf3d_epoch_fn on_epoch, void* user, char** summary);

SF3D_API sf3d_status sf3d_model_create(const sf3d_config* cfg, uint64_t seed, sf3d_model** out);
SF3D_API sf3d_status sf3d_model_load(const char* checkpoint_dir, sf3d_model** out);
SF3D_API sf3d_status sf3d_model_save(const sf3d_model* model, int64_t step, const char* checkpoint_dir);
/* Optimizer step stored in the checkpoint the model came from (0 if fresh). */
SF3D_API int64_t sf3d_model_step(const sf3d_model* model);
SF3D_API int64_t sf3d_model_num_parameters(const sf3d_model* model);
SF3D_API int sf3d_model_num_classes(const sf3d_model* model);
/* input is [batch, in_channels, d, h, w] float32; logits (capacity
 * logits_len floats) receives [batch, num_classes, d, h, w]. */
SF3D_API sf3d_status sf3d_model_forward(const sf3d_model* model, const float* input, const int64_t shape[5], float* logits,
                                        size_t logits_len);
/* Dice table over a VSEG1 dataset directory, keyed like a metrics-log line:
 * {epoch: null, step, lr: null, loss, eval_loss, dice_per_class, mean_dice, wall_ms, samples}
 * where loss and eval_loss are both the mean dice-CE loss on the dataset. */
SF3D_API sf3d_status sf3d_model_evaluate(const sf3d_model* model, const char* data_dir, int batch_size, char** result);
SF3D_API void sf3d_model_free(sf3d_model* model);

/* Analytic parameter and FLOP report for the config's model at input shape
 * [batch, channels, d, h, w]. Either output may be NULL. */
SF3D_API sf3d_status sf3d_profile(const sf3d_config* cfg, const int64_t shape[5], char** report_json, char** table);

typedef struct sf3d_attn_bench {
    int64_t n, channels, heads, reduction;
    uint64_t score_flops; /* Q K^T plus scores x V */
    uint64_t layer_flops; /* whole attention layer */
    double score_ms;      /* best wall time of the score computation */
    double layer_ms;      /* best wall time of the whole layer */
} sf3d_attn_bench;

SF3D_API sf3d_status sf3d_bench_attention(int64_t n, int64_t channels, int heads, int64_t reduction, int repeats, uint64_t seed,
                                          sf3d_attn_bench* out);

#ifdef __cplusplus
}
#endif

#endif
