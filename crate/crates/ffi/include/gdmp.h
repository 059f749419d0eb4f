#ifndef GDMP_H
#define GDMP_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum GdmpStatus {
  GDMP_STATUS_OK = 0,
  GDMP_STATUS_NULL_POINTER = 1,
  GDMP_STATUS_INVALID_INPUT = 2,
  GDMP_STATUS_PARSE = 3,
  GDMP_STATUS_NUMERICAL = 4,
  GDMP_STATUS_BUFFER_TOO_SMALL = 5,
  GDMP_STATUS_PANIC = 6,
} GdmpStatus;

typedef enum GdmpGridKind {
  GDMP_GRID_KIND_PRODUCT = 0,
  GDMP_GRID_KIND_MONTE_CARLO = 1,
  GDMP_GRID_KIND_CUBED = 2,
} GdmpGridKind;

typedef enum GdmpSolveStatus {
  GDMP_SOLVE_STATUS_CONVERGED = 0,
  GDMP_SOLVE_STATUS_MAX_ITER = 1,
  GDMP_SOLVE_STATUS_REFUSED_PRECONDITIONS = 2,
} GdmpSolveStatus;

typedef struct GdmpGrid GdmpGrid;

typedef struct GdmpMeasure GdmpMeasure;

typedef struct GdmpPolytope GdmpPolytope;

typedef struct GdmpSolveReport GdmpSolveReport;

typedef struct GdmpStarBody GdmpStarBody;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the last error message of this thread (NUL-terminated, truncated
// to `cap`) and returns its full length in bytes, excluding the NUL.
size_t gdmp_last_error_message(char *buf, size_t cap);

enum GdmpStatus gdmp_grid_new(size_t dim,
                              size_t resolution,
                              enum GdmpGridKind kind,
                              uint64_t seed,
                              struct GdmpGrid **out);

size_t gdmp_grid_len(const struct GdmpGrid *grid);

void gdmp_grid_free(struct GdmpGrid *grid);

enum GdmpStatus gdmp_star_ball_new(size_t dim, double radius, struct GdmpStarBody **out);

// Axis-aligned ellipsoid; `semi_axes` holds `dim` values in ascending order.
enum GdmpStatus gdmp_star_ellipsoid_new(size_t dim,
                                        const double *semi_axes,
                                        struct GdmpStarBody **out);

// Parses a `gdmp.star_body/1` document.
enum GdmpStatus gdmp_star_from_json(const char *json, struct GdmpStarBody **out);

void gdmp_star_free(struct GdmpStarBody *body);

// Polytope from `count` unit normals (row-major, `count * dim` values) and
// `count` support numbers.
enum GdmpStatus gdmp_polytope_new(size_t dim,
                                  size_t count,
                                  const double *normals,
                                  const double *support,
                                  struct GdmpPolytope **out);

void gdmp_polytope_free(struct GdmpPolytope *polytope);

// Measure from `count` unit atoms (row-major) and nonnegative weights.
enum GdmpStatus gdmp_measure_new(size_t dim,
                                 size_t count,
                                 const double *atoms,
                                 const double *weights,
                                 struct GdmpMeasure **out);

// Parses a `gdmp.measure/1` document.
enum GdmpStatus gdmp_measure_from_json(const char *json, struct GdmpMeasure **out);

size_t gdmp_measure_len(const struct GdmpMeasure *measure);

enum GdmpStatus gdmp_measure_weights(const struct GdmpMeasure *measure,
                                     double *buf,
                                     size_t cap,
                                     size_t *needed);

void gdmp_measure_free(struct GdmpMeasure *measure);

// Discrete dual mixed volume of `polytope` against `star` on `grid`.
enum GdmpStatus gdmp_dual_volume(const struct GdmpPolytope *polytope,
                                 const struct GdmpStarBody *star,
                                 double q,
                                 const struct GdmpGrid *grid,
                                 double *out);

enum GdmpStatus gdmp_curvature_measure(const struct GdmpPolytope *polytope,
                                       const struct GdmpStarBody *star,
                                       double q,
                                       const struct GdmpGrid *grid,
                                       struct GdmpMeasure **out);

// Solves on `grid`. `config_json` is a `gdmp.solve_config/1` document or
// NULL for the defaults with the given `q`; when a document is given its
// own `q` is used and the argument is ignored.
enum GdmpStatus gdmp_solve(const struct GdmpMeasure *measure,
                           const struct GdmpStarBody *star,
                           double q,
                           const char *config_json,
                           const struct GdmpGrid *grid,
                           struct GdmpSolveReport **out);

enum GdmpStatus gdmp_report_status(const struct GdmpSolveReport *report, enum GdmpSolveStatus *out);

// Support numbers of the solution; fails with `GDMP_STATUS_INVALID_INPUT`
// when the solve was refused.
enum GdmpStatus gdmp_report_support(const struct GdmpSolveReport *report,
                                    double *buf,
                                    size_t cap,
                                    size_t *needed);

enum GdmpStatus gdmp_report_residual(const struct GdmpSolveReport *report, double *out);

// Canonical JSON of the report. Writes at most `cap` bytes including the
// terminating NUL; `*needed` receives the length without the NUL.
enum GdmpStatus gdmp_report_json(const struct GdmpSolveReport *report,
                                 char *buf,
                                 size_t cap,
                                 size_t *needed);

void gdmp_report_free(struct GdmpSolveReport *report);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GDMP_H */
