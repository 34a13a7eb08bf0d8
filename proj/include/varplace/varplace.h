/* C interface to the varplace toolkit. */
#ifndef VARPLACE_H
#define VARPLACE_H

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define VP_API __declspec(dllexport)
#else
#define VP_API __attribute__((visibility("default")))
#endif

typedef enum vp_status {
  VP_OK = 0,
  VP_ERR_CONVERGENCE = 1, /* power flow, network solve or simulation failed */
  VP_ERR_VALIDATION = 2,  /* malformed input or arguments */
  VP_ERR_IO = 3,          /* file could not be read or written */
  VP_ERR_INTERNAL = 4
} vp_status;

typedef struct vp_case vp_case;

VP_API const char* vp_version(void);

/* Message for the last failure on the calling thread; "" when none. */
VP_API const char* vp_last_error(void);

VP_API vp_status vp_case_load_file(const char* path, vp_case** out);
VP_API vp_status vp_case_load_text(const char* text, vp_case** out);
VP_API void vp_case_free(vp_case* c);

VP_API size_t vp_case_bus_count(const vp_case* c);
VP_API size_t vp_case_branch_count(const vp_case* c);
VP_API size_t vp_case_candidate_count(const vp_case* c);
/* Copies up to `n` bus ids in case order. Returns the number written. */
VP_API size_t vp_case_bus_ids(const vp_case* c, int* ids, size_t n);

/* Solves the power flow. Arrays must hold vp_case_bus_count entries; any of
   them may be NULL. Angles are in radians. */
VP_API vp_status vp_powerflow(const vp_case* c, double* v_mag, double* v_ang, int* iterations);

/* c_svc * n_svc + c_fidvr * sum(n_total - counts[i]). */
VP_API vp_status vp_total_cost(double c_svc, double c_fidvr, const size_t* counts, size_t k,
                               size_t n_svc, size_t n_total, double* out);

/* Runs a pipeline command (powerflow, simulate, screen, ecc, place, vsi,
   coverage, cost). `request_json` is {"config": path, "overrides": {...},
   "args": {...}}. On success *result_json receives a JSON summary that the
   caller releases with vp_string_free. */
VP_API vp_status vp_command_run(const char* command, const char* request_json,
                                char** result_json);

VP_API void vp_string_free(char* s);

#ifdef __cplusplus
}
#endif

#endif
