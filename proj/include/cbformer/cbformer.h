#ifndef CBFORMER_H
#define CBFORMER_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define CBF_API __declspec(dllexport)
#else
#define CBF_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum cbf_status {
    CBF_OK = 0,
    CBF_ERR_INVALID_ARGUMENT = 1, /* null handle or malformed argument */
    CBF_ERR_VALIDATION = 2,       /* configuration rejected; message lists every problem */
    CBF_ERR_RUNTIME = 3,          /* data, I/O, numerical or analysis failure */
    CBF_ERR_SELFCHECK = 4         /* a selfcheck suite failed */
} cbf_status;

typedef struct cbf_experiment cbf_experiment;
typedef struct cbf_model cbf_model;

/* Message of the last failed call on this thread; empty after success. */
CBF_API const char* cbf_last_error(void);
CBF_API const char* cbf_version(void);

/* Experiments: a config file plus "key.path=value" overrides. */
CBF_API cbf_status cbf_experiment_open(const char* config_path, const char* const* overrides, size_t override_count,
                                       cbf_experiment** out);
CBF_API void cbf_experiment_close(cbf_experiment* exp);
/* Run directory <output root>/<name>; valid until the handle is closed. */
CBF_API const char* cbf_experiment_run_dir(const cbf_experiment* exp);
/* Effective configuration as JSON; valid until the next call on the handle. */
CBF_API const char* cbf_experiment_config_json(cbf_experiment* exp);

/* (epoch, step within epoch, loss, user) */
typedef void (*cbf_step_fn)(size_t, size_t, double, void*);

/* A null checkpoint path means <run dir>/checkpoint.bin. */
CBF_API cbf_status cbf_fit_ar(cbf_experiment* exp);
CBF_API cbf_status cbf_train(cbf_experiment* exp, cbf_step_fn on_step, void* user);
CBF_API cbf_status cbf_evaluate(cbf_experiment* exp, const char* checkpoint, double* mse, double* mae);
CBF_API cbf_status cbf_cka_report(cbf_experiment* exp, const char* checkpoint);
/* Null mask / origin fall back to the analysis section. */
CBF_API cbf_status cbf_lens(cbf_experiment* exp, const char* checkpoint, const char* mask, const char* origin);
/* Null shifts fall back to the analysis section (default 0..23). */
CBF_API cbf_status cbf_intervene(cbf_experiment* exp, const char* checkpoint, const long* shifts, size_t shift_count);
/* Null alphas fall back to the analysis section. */
CBF_API cbf_status cbf_alpha_sweep(cbf_experiment* exp, const double* alphas, size_t alpha_count, cbf_step_fn on_step,
                                   void* user);

CBF_API cbf_status cbf_emit_reports(const char* run_dir);

/* (suite name, passed, detail, user) */
typedef void (*cbf_suite_fn)(const char*, int, const char*, void*);
/* CBF_ERR_SELFCHECK when any suite fails. */
CBF_API cbf_status cbf_selfcheck(cbf_suite_fn on_suite, void* user);

/* Trained models. */
CBF_API cbf_status cbf_model_load(const char* checkpoint, cbf_model** out);
CBF_API void cbf_model_free(cbf_model* model);
CBF_API cbf_status cbf_model_shape(const cbf_model* model, size_t* input_len, size_t* output_len, size_t* channels);
/* Row-major x [batch, I, d], marks [batch, I, 4], future_marks [batch, O, 4]
   (normalized values, scaled time features) -> out [batch, O, d]. */
CBF_API cbf_status cbf_model_forecast(const cbf_model* model, const double* x, const double* marks,
                                      const double* future_marks, size_t batch, double* out);

#ifdef __cplusplus
}
#endif

#endif
