#ifndef STREAMBAYES_H
#define STREAMBAYES_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define SB_API __declspec(dllexport)
#else
#define SB_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Every call returns SB_OK or a failure code; sb_last_error() then holds the message. */
typedef enum sb_status {
  SB_OK = 0,
  SB_USAGE,
  SB_CONFIG,
  SB_IO,
  SB_PARSE,
  SB_SCHEMA,
  SB_TYPE,
  SB_ORDER,
  SB_STRUCTURE,
  SB_VALIDATION,
  SB_MISSING_VALUE,
  SB_UNKNOWN_VARIABLE,
  SB_INVALID_PARAMETER,
  SB_DOMAIN,
  SB_CONJUGACY,
  SB_TOO_LARGE,
  SB_EMPTY_MODEL,
  SB_DEGENERATE_EVIDENCE,
  SB_NUMERICAL,
  SB_UNDEFINED_VARIANCE_MEAN,
  SB_INTERNAL
} sb_status;

typedef enum sb_algorithm { SB_ALGO_VMP = 0, SB_ALGO_IS = 1 } sb_algorithm;

typedef struct sb_model sb_model;         /* static or dynamic network */
typedef struct sb_stream sb_stream;       /* ARFF reader, static or dynamic */
typedef struct sb_learner sb_learner;     /* template plus parameter posteriors */
typedef struct sb_posterior sb_posterior; /* marginals from one inference call */
typedef struct sb_filter sb_filter;       /* per-sequence filtering state */

SB_API const char* sb_status_name(sb_status status);
/* Message of the last failure on the calling thread; empty after a success-only history. */
SB_API const char* sb_last_error(void);
/* Frees strings returned through char** out-parameters. */
SB_API void sb_string_free(char* s);

/* Models */
SB_API sb_status sb_model_load(const char* path, sb_model** out);
SB_API sb_status sb_model_parse(const char* json_text, sb_model** out);
SB_API int sb_model_is_dynamic(const sb_model* model);
SB_API sb_status sb_model_to_json(const sb_model* model, char** out);
SB_API sb_status sb_model_render(const sb_model* model, char** out);
SB_API void sb_model_free(sb_model* model);

/* Streams. "-" reads standard input. Dynamic streams need SEQUENCE_ID and TIME_ID columns. */
SB_API sb_status sb_stream_open(const char* path, int dynamic, sb_stream** out);
SB_API int sb_stream_is_dynamic(const sb_stream* stream);
SB_API void sb_stream_free(sb_stream* stream);

/* Learning */
typedef struct sb_learn_config {
  size_t batch_size;
  int workers;
  uint64_t seed;
  int use_svi; /* 0: streaming posterior chaining; 1: natural-gradient steps */
  double svi_kappa;
  double svi_tau;
  long svi_total_n; /* 0: ten times the batch size */
} sb_learn_config;

SB_API void sb_learn_config_init(sb_learn_config* cfg);
/* True for templates that need a dynamic stream (hmm, kf). */
SB_API int sb_template_is_dynamic(const char* template_id);
/* Builds the template over the stream's attributes. */
SB_API sb_status sb_learner_new(const char* template_id, const sb_stream* stream, sb_learner** out);
/* Reads one batch and updates the posterior. At end of stream sets *done = 1 and changes nothing. */
SB_API sb_status sb_learner_step(sb_learner* learner, sb_stream* stream, const sb_learn_config* cfg, int* done,
                                 long* batch_index, size_t* instances, double* elbo);
/* Point-estimate model JSON with a "posterior" member. */
SB_API sb_status sb_learner_to_json(const sb_learner* learner, char** out);
SB_API sb_status sb_learner_render(const sb_learner* learner, char** out);
SB_API void sb_learner_free(sb_learner* learner);

/* Inference */
typedef struct sb_infer_config {
  sb_algorithm algorithm;
  long samples;
  uint64_t seed;
  int workers;
  int max_iterations;
  double tolerance;
} sb_infer_config;

SB_API void sb_infer_config_init(sb_infer_config* cfg);
/* evidence: "name=value,..." (may be empty); targets: "name,..." (empty means every unobserved variable). */
SB_API sb_status sb_infer(const sb_model* model, const char* evidence, const char* targets, const sb_infer_config* cfg,
                          sb_posterior** out);
SB_API size_t sb_posterior_count(const sb_posterior* p);
/* probabilities is NULL and states 0 for Gaussian marginals. Pointers live as long as `p`. */
SB_API sb_status sb_posterior_get(const sb_posterior* p, size_t index, const char** name, int* discrete,
                                  const double** probabilities, size_t* states, double* mean, double* variance);
/* One "P(target|evidence) = ..." line per target, or a JSON document when json != 0. */
SB_API sb_status sb_posterior_render(const sb_posterior* p, int json, char** out);
SB_API void sb_posterior_free(sb_posterior* p);

/* Filtering over a dynamic stream whose columns are bound by name to the model. */
SB_API sb_status sb_filter_new(const sb_model* model, const sb_stream* stream, const char* target,
                               const sb_infer_config* cfg, sb_filter** out);
/* Consumes one row and renders its filtered posterior (and, for horizon > 0, the predictive one).
   Sets *done = 1 at end of stream. */
SB_API sb_status sb_filter_step(sb_filter* filter, sb_stream* stream, int horizon, int json, char** out, int* done);
SB_API void sb_filter_free(sb_filter* filter);

/* Writes n ancestral samples of a static model as ARFF. */
SB_API sb_status sb_sample_to_file(const sb_model* model, size_t n, uint64_t seed, const char* path);

#ifdef __cplusplus
}
#endif

#endif
