/* C interface to the usbl library.
 *
 * Every function returns a usbl_status; on failure usbl_last_error() gives a
 * message for the calling thread. Strings returned through char** outputs
 * are owned by the caller and released with usbl_string_free(). Handles are
 * released with their matching *_free function; passing NULL is allowed.
 */
#ifndef USBL_USBL_H
#define USBL_USBL_H

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define USBL_API __declspec(dllexport)
#else
#define USBL_API __attribute__((visibility("default")))
#endif

typedef enum usbl_status {
  USBL_OK = 0,
  USBL_ERR_USAGE = 1,
  USBL_ERR_DATA = 2,
  USBL_ERR_NUMERIC = 3,
  USBL_ERR_INTERNAL = 4
} usbl_status;

typedef struct usbl_dataset usbl_dataset;
typedef struct usbl_model usbl_model;
typedef struct usbl_results usbl_results;

USBL_API const char* usbl_version(void);
USBL_API const char* usbl_last_error(void);
/* Symbolic code of the last error, e.g. "BadMagic"; empty when none. */
USBL_API const char* usbl_last_error_code(void);
USBL_API void usbl_string_free(char* s);

/* Generates a synthetic cohort into out_dir. config_json may be NULL. */
USBL_API usbl_status usbl_simulate(const char* config_json, const char* out_dir, char** summary_json);

/* path is a dataset directory (holding manifest.json) or a manifest file. */
USBL_API usbl_status usbl_dataset_load(const char* path, usbl_dataset** out);
USBL_API void usbl_dataset_free(usbl_dataset* ds);
USBL_API usbl_status usbl_dataset_info(const usbl_dataset* ds, char** info_json);

/* Fills defaults into a configuration document. kind: "fit", "eval" or "simulate". */
USBL_API usbl_status usbl_resolve_config(const char* kind, const char* config_json, char** resolved_json);

/* Stage-1 fit; calibrated when the config sets "calibrate": true. */
USBL_API usbl_status usbl_fit(const usbl_dataset* ds, const char* config_json, usbl_model** out);
/* Same as usbl_fit with calibration forced on. */
USBL_API usbl_status usbl_calibrate(const usbl_dataset* ds, const char* config_json, usbl_model** out);
USBL_API usbl_status usbl_model_save(const usbl_model* m, const char* dir);
USBL_API usbl_status usbl_model_load(const char* dir, usbl_model** out);
USBL_API void usbl_model_free(usbl_model* m);
USBL_API usbl_status usbl_model_info(const usbl_model* m, char** info_json);
USBL_API usbl_status usbl_predict(const usbl_model* m, const usbl_dataset* ds, char** predictions_json);

USBL_API usbl_status usbl_eval(const usbl_dataset* ds, const char* config_json, usbl_results** out);
USBL_API usbl_status usbl_results_json(const usbl_results* r, char** out);
USBL_API usbl_status usbl_results_csv(const usbl_results* r, char** out);
USBL_API void usbl_results_free(usbl_results* r);

/* format: "text" or "csv". Reads only the results document. */
USBL_API usbl_status usbl_report(const char* results_json, const char* format, char** out);

USBL_API usbl_status usbl_dscore(const usbl_dataset* ds, const char* modality, int clamp, char** out);
USBL_API usbl_status usbl_deff(const usbl_dataset* ds, const char* modality, int n_pcs, char** out);

#ifdef __cplusplus
}
#endif

#endif
