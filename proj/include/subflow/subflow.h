/* SubFlow C interface: phase-based subpixel motion extraction and the
 * SubFlowNet encoder-decoder networks behind opaque handles.
 *
 * Every fallible call returns an sf_status. On failure, sf_last_error()
 * returns a module-qualified message for the calling thread; it stays valid
 * until the next failing call on that thread. Output handles are set only on
 * success and must be released with the matching *_free function.
 */
#ifndef SUBFLOW_SUBFLOW_H
#define SUBFLOW_SUBFLOW_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define SF_API __declspec(dllexport)
#else
#define SF_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum sf_status {
  SF_OK = 0,
  SF_ERR_IO = 1,
  SF_ERR_FORMAT = 2,
  SF_ERR_DIMENSION = 3,
  SF_ERR_PARAMETER = 4,
  SF_ERR_STATE = 5,
  SF_ERR_EMPTY_REGION = 6,
  SF_ERR_NUMERIC = 7,
  SF_ERR_INTERNAL = 99
} sf_status;

typedef enum sf_frame_format { SF_FORMAT_PGM_SEQUENCE = 0, SF_FORMAT_RAW_F32 = 1 } sf_frame_format;
typedef enum sf_texture_kind { SF_TEXTURE_FILTERED_NOISE = 0, SF_TEXTURE_BARS = 1, SF_TEXTURE_BLOBS = 2 } sf_texture_kind;
typedef enum sf_motion_kind {
  SF_MOTION_ZERO = 0,
  SF_MOTION_SINE = 1,
  SF_MOTION_DAMPED_SINE = 2,
  SF_MOTION_MULTI_SINE = 3
} sf_motion_kind;
typedef enum sf_variant { SF_SUBFLOWNET_S = 0, SF_SUBFLOWNET_C = 1 } sf_variant;
typedef enum sf_region { SF_REGION_FULL = 0, SF_REGION_INTERIOR = 1, SF_REGION_MASKED = 2 } sf_region;
typedef enum sf_sparse_norm { SF_SPARSE_NORM_N = 0, SF_SPARSE_NORM_M = 1 } sf_sparse_norm;

typedef struct sf_video sf_video;
typedef struct sf_fields sf_fields;
typedef struct sf_estimator sf_estimator;
typedef struct sf_network sf_network;

SF_API const char* sf_version(void);
SF_API const char* sf_last_error(void);
SF_API const char* sf_status_name(sf_status status);
/* Effective thread count: requested if >= 1, else SUBFLOW_THREADS, else 1. */
SF_API int sf_resolve_threads(int requested);

/* ---- phase configuration ------------------------------------------------ */

typedef struct sf_phase_options {
  int kernel_size;         /* 9 */
  double wavelength;       /* 8 px */
  double sigma;            /* 2 px */
  double mask_coefficient; /* 1.0 */
  int top_count;           /* 30 */
  double top_fraction;     /* 0.2 */
  int border;              /* 4 */
} sf_phase_options;

SF_API void sf_phase_options_default(sf_phase_options* opts);

/* ---- videos -------------------------------------------------------------- */

typedef struct sf_synth_options {
  uint64_t seed;
  int width;
  int height;
  int frames;
  double frame_rate;
  sf_texture_kind texture;
  double texture_wavelength;
  double texture_sigma;
  sf_motion_kind motion;
  double amplitude;
  double frequency;
  double damping;
  double direction; /* radians from +x */
  double noise_sigma;
  int downsample_levels; /* blur+downsample applied after generation; truth scaled to match */
} sf_synth_options;

SF_API void sf_synth_options_default(sf_synth_options* opts);
SF_API sf_status sf_video_synthesize(const sf_synth_options* opts, sf_video** out);
SF_API sf_status sf_video_load(const char* path, sf_frame_format format, sf_video** out);
SF_API sf_status sf_video_save(const sf_video* video, const char* path, sf_frame_format format);
SF_API sf_status sf_video_info(const sf_video* video, int* width, int* height, int* frames, double* frame_rate);
/* Copies frame `index` (row-major luma in [0,1]) into buffer of `capacity` doubles. */
SF_API sf_status sf_video_frame(const sf_video* video, int index, double* buffer, size_t capacity);
/* New video with every frame blur-downsampled `levels` times (truth halves per level). */
SF_API sf_status sf_video_downsample(const sf_video* video, int levels, sf_video** out);
/* Known translation of frame `index` relative to frame 0; SF_ERR_STATE when the video has none. */
SF_API sf_status sf_video_truth(const sf_video* video, int index, double* dx, double* dy);
SF_API int sf_video_has_truth(const sf_video* video);
SF_API sf_status sf_video_save_truth(const sf_video* video, const char* csv_path);
SF_API sf_status sf_video_load_truth(sf_video* video, const char* csv_path, double scale);
SF_API void sf_video_free(sf_video* video);

/* ---- estimators and displacement fields ---------------------------------- */

SF_API sf_status sf_estimator_phase(const sf_phase_options* opts, sf_estimator** out);
SF_API sf_status sf_estimator_network(const sf_network* net, const sf_phase_options* opts, int threads,
                                      sf_estimator** out);
SF_API const char* sf_estimator_name(const sf_estimator* est);
/* Frame 0 is the reference; field i is frame i+1 against it. */
SF_API sf_status sf_estimator_run(sf_estimator* est, const sf_video* video, sf_fields** out);
SF_API void sf_estimator_free(sf_estimator* est);

SF_API int sf_fields_count(const sf_fields* fields);
SF_API sf_status sf_fields_shape(const sf_fields* fields, int* width, int* height);
/* Any output pointer may be NULL. Buffers hold width*height entries. */
SF_API sf_status sf_fields_get(const sf_fields* fields, int index, double* u, double* v, uint8_t* mask_u,
                               uint8_t* mask_v, size_t capacity);
SF_API sf_status sf_fields_out_of_range(const sf_fields* fields, size_t* count);
/* u_#####.csv and v_#####.csv grids plus masks in `dir`. */
SF_API sf_status sf_fields_write_csv(const sf_fields* fields, const char* dir);
/* x,y,frame_index,u,v CSV for the listed pixels (xy holds n_pixels pairs). */
SF_API sf_status sf_fields_write_time_history(const sf_fields* fields, const sf_video* video, const int* xy,
                                              size_t n_pixels, const char* csv_path);
/* RMS error of the time history at (x, y) against the video's known translation. */
SF_API sf_status sf_fields_rms_vs_truth(const sf_fields* fields, const sf_video* video, int x, int y, double* rms_u,
                                        double* rms_v);
/* Uniform-translation truth fields of a video with known motion, masks from `masks`. */
SF_API sf_status sf_fields_truth(const sf_video* video, const sf_fields* masks, sf_fields** out);
SF_API sf_status sf_fields_mae(const sf_fields* pred, const sf_fields* truth, sf_region region, double* mae_u,
                               double* mae_v, size_t* count_u, size_t* count_v);
/* Threshold sweep pooled over every field pair. Masks are recomputed from the
 * reference frame of `video` with C*T0. Empty masks give NaN MAE. */
SF_API sf_status sf_fields_sweep(const sf_fields* pred, const sf_fields* truth, const sf_video* video,
                                 const sf_phase_options* opts, const double* coefficients, size_t n,
                                 double* mae_out, size_t* count_out);
SF_API void sf_fields_free(sf_fields* fields);

/* ---- networks ------------------------------------------------------------ */

typedef struct sf_arch_options {
  int encoder[4];
  int decoder[3];
  int head[8];
  int head_count;
  int skip_full_resolution;
  int share_stream_weights;
} sf_arch_options;

SF_API sf_status sf_arch_options_default(sf_variant variant, sf_arch_options* opts);
/* Seeded uniform initialization; arch may be NULL for the default. */
SF_API sf_status sf_network_create(sf_variant variant, const sf_arch_options* arch, uint64_t seed, sf_network** out);
SF_API sf_status sf_network_load(const char* path, sf_network** out);
SF_API sf_status sf_network_save(const sf_network* net, const char* path);
SF_API sf_status sf_network_info(const sf_network* net, sf_variant* variant, size_t* param_count);
SF_API sf_status sf_network_arch(const sf_network* net, sf_arch_options* arch);
SF_API sf_status sf_network_set_zero(sf_network* net);
/* One CSV per first-layer kernel; *count receives the number written. */
SF_API sf_status sf_network_export_filters(const sf_network* net, const char* dir, size_t* count);
/* Predicts the (u, v) field for one pair of width*height frames. */
SF_API sf_status sf_network_predict(const sf_network* net, const double* reference, const double* current, int width,
                                    int height, double* u, double* v);
SF_API void sf_network_free(sf_network* net);

/* ---- datasets ------------------------------------------------------------ */

typedef struct sf_dataset_options {
  int sections;
  int frames_per_section;
  int first_frame;
  int train_boxes;
  int validation_boxes;
  int test_boxes;
  int include_flipped;
  uint64_t seed;
  /* Column bands as fractions of the width: train [0,a), validation [a,b), test [b,1). */
  double train_fraction;
  double validation_fraction;
  sf_phase_options phase;
} sf_dataset_options;

typedef struct sf_dataset_summary {
  size_t train_pairs;
  size_t validation_pairs;
  size_t test_pairs;
  size_t plans;
  size_t out_of_range;
} sf_dataset_summary;

SF_API void sf_dataset_options_default(sf_dataset_options* opts);
SF_API sf_status sf_dataset_build(const sf_video* video, const sf_dataset_options* opts, const char* out_dir,
                                  int threads, sf_dataset_summary* summary);
/* Pairs a dataset with these options would contain, without labelling. */
SF_API sf_status sf_dataset_plan_count(int width, int height, const sf_dataset_options* opts,
                                       sf_dataset_summary* summary);
SF_API sf_status sf_dataset_count(const char* dir, size_t* count);

/* ---- training ------------------------------------------------------------ */

typedef struct sf_train_options {
  sf_variant variant;
  int batch_size;
  int epochs;
  double learning_rate;
  double beta1;
  double beta2;
  double eps;
  uint64_t seed;
  int mask_loss_enabled;
  sf_sparse_norm sparse_norm;
  int threads;
  int deterministic;
  int max_train_samples; /* 0 = all */
  const char* checkpoint_path;
  const char* log_path;
  const sf_arch_options* arch; /* NULL = default */
} sf_train_options;

typedef struct sf_epoch_report {
  int epoch;
  double train_full;
  double train_sparse;
  double train_total;
  double val_full;
  double val_sparse;
  double val_total;
  double seconds;
} sf_epoch_report;

typedef struct sf_train_summary {
  int epochs_run;
  int best_epoch;
  double best_validation_loss;
  size_t train_samples;
  size_t validation_samples;
} sf_train_summary;

typedef void (*sf_epoch_callback)(const sf_epoch_report* report, void* user);

SF_API void sf_train_options_default(sf_train_options* opts);
/* Trains on the shards in train_dir, validating on val_dir. *best receives the
 * lowest-validation-loss parameters (may be NULL). */
SF_API sf_status sf_train(const char* train_dir, const char* val_dir, const sf_train_options* opts,
                          sf_epoch_callback callback, void* user, sf_network** best, sf_train_summary* summary);

/* ---- evaluation and benchmarks ------------------------------------------- */

typedef struct sf_dataset_eval {
  size_t samples;
  double full_u, full_v;
  double interior_u, interior_v;
  double masked_u, masked_v, masked;
  size_t masked_count;
  double loss_full, loss_sparse, loss_total;
} sf_dataset_eval;

/* MAE against stored labels plus a pooled threshold sweep (mae_out/count_out
 * hold n entries; may be NULL when n is 0). */
SF_API sf_status sf_evaluate_dataset(const sf_network* net, const char* dir, const sf_phase_options* opts,
                                     int threads, const double* coefficients, size_t n, sf_dataset_eval* result,
                                     double* mae_out, size_t* count_out);

typedef struct sf_bench_report {
  int n_pairs;
  int threads;
  size_t param_count;
  double net_ms_per_pair;
  double net_pairs_per_second;
  double phase_ms_per_pair;
  double phase_pairs_per_second;
  double speed_ratio;
} sf_bench_report;

SF_API sf_status sf_benchmark(const sf_network* net, int n_pairs, uint64_t seed, int threads,
                              sf_bench_report* report);

#ifdef __cplusplus
}
#endif

#endif
