/* C API for the sscount shared library: opaque handles + status codes.
 * Every function that can fail returns ssc_status (or NULL for creators);
 * ssc_last_error() carries the message for the calling thread. */
#ifndef SSCOUNT_CAPI_H
#define SSCOUNT_CAPI_H

#include <stdint.h>

#ifndef SSC_API
#if defined(_WIN32)
#define SSC_API __declspec(dllexport)
#else
#define SSC_API __attribute__((visibility("default")))
#endif
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum ssc_status {
  SSC_OK = 0,
  SSC_ERR_INVALID = 1, /* bad arguments, shape/geometry violations */
  SSC_ERR_NUMERIC = 2, /* NaN/Inf reached an op */
  SSC_ERR_IO = 3,      /* unreadable/malformed files */
  SSC_ERR_INTERNAL = 4
} ssc_status;

SSC_API const char* ssc_last_error(void);

/* ---- tensors (SSDT files); values surface as f64 ---- */
typedef struct ssc_tensor ssc_tensor;

SSC_API ssc_tensor* ssc_tensor_load(const char* path);
SSC_API ssc_tensor* ssc_tensor_create(const uint32_t* extents, int ndim,
                                      const double* data);
SSC_API ssc_status ssc_tensor_save(const ssc_tensor* t, const char* path);
SSC_API int ssc_tensor_ndim(const ssc_tensor* t);
SSC_API ssc_status ssc_tensor_extents(const ssc_tensor* t, uint32_t* out, int cap);
SSC_API int64_t ssc_tensor_numel(const ssc_tensor* t);
SSC_API ssc_status ssc_tensor_read(const ssc_tensor* t, double* out, int64_t cap);
SSC_API void ssc_tensor_free(ssc_tensor* t);

/* ---- models ---- */
typedef struct ssc_model ssc_model;

SSC_API ssc_model* ssc_model_create(const char* config_json_or_null, uint64_t seed);
SSC_API ssc_model* ssc_model_load(const char* checkpoint_dir);
SSC_API ssc_status ssc_model_save(const ssc_model* m, const char* checkpoint_dir);
SSC_API void ssc_model_free(ssc_model* m);

/* ---- dataset generation ----
 * Writes out_dir/train and out_dir/val with disjoint category pools.
 * n <= 0, image_* <= 0 fall back to the config/preset values. */
SSC_API ssc_status ssc_synth(const char* config_json_or_null, const char* out_dir,
                             int n, uint64_t seed, int image_h, int image_w);

/* ---- training ----
 * config_json: run config file (NULL for the desk preset);
 * overrides_json: inline JSON merged over it, e.g. {"train":{"fce":false}}. */
SSC_API ssc_status ssc_train(const char* config_json_or_null,
                             const char* overrides_json_or_null, const char* data_dir,
                             const char* out_dir);

/* ---- inference ---- */
typedef struct ssc_predict_options {
  const char* density_out;    /* SSDT path, required */
  const char* pgm_out;        /* optional PGM view + .json sidecar */
  const char* similarity_dir; /* optional sim_p{p}_k{k}.ssdt dumps */
  int profile;                /* nonzero: write <density_out>.flops.json */
  int apply_dis;
  double dis_gamma;
  double dis_eta;
} ssc_predict_options;

SSC_API ssc_status ssc_predict(ssc_model* m, const char* sample_json,
                               const ssc_predict_options* opts, double* count_out);

/* shots <= 0 keeps every exemplar box of each sample. */
SSC_API ssc_status ssc_evaluate(ssc_model* m, const char* data_dir, int shots,
                                int apply_dis, double dis_gamma, double dis_eta,
                                const char* report_json_or_null, double* mae_out,
                                double* rmse_out);

/* module_or_null: NULL runs every module. failures_out: # failed checks. */
SSC_API ssc_status ssc_gradcheck(const char* module_or_null,
                                 const char* report_json_or_null, int* failures_out);

#ifdef __cplusplus
}
#endif

#endif /* SSCOUNT_CAPI_H */
