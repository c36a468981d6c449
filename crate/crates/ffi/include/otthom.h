#ifndef OTTHOM_H
#define OTTHOM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum OtthomStatus {
  OtthomStatus_Ok = 0,
  OtthomStatus_NullPointer = 1,
  OtthomStatus_InvalidUtf8 = 2,
  OtthomStatus_InvalidArgument = 3,
  OtthomStatus_InvalidGraph = 4,
  OtthomStatus_SolverFailed = 5,
  OtthomStatus_Io = 6,
  /**
   * A Rust panic was caught at the boundary.
   */
  OtthomStatus_Panic = 7,
} OtthomStatus;

/**
 * Opaque density model handle.
 */
typedef struct OtthomDensityModel OtthomDensityModel;

/**
 * Opaque graph handle.
 */
typedef struct OtthomGraph OtthomGraph;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *otthom_version(void);

/**
 * Copies the calling thread's last error message into `buf` (truncated,
 * always NUL-terminated when `len > 0`) and returns the full message
 * length excluding the terminator. Returns 0 when there is no error.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t otthom_last_error(char *buf, size_t len);

void otthom_clear_error(void);

/**
 * Frees a string returned by this library.
 *
 * # Safety
 * `s` must be null or a string returned by this library, not yet freed.
 */
void otthom_string_free(char *s);

/**
 * Generates a graph from a JSON generator spec.
 *
 * # Safety
 * `spec_json` must be a NUL-terminated string; `out` a valid pointer.
 */
enum OtthomStatus otthom_graph_generate(const char *spec_json, struct OtthomGraph **out);

/**
 * Parses a graph from its JSON form.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` a valid pointer.
 */
enum OtthomStatus otthom_graph_from_json(const char *json, struct OtthomGraph **out);

/**
 * Serialises a graph; free the result with [`otthom_string_free`].
 *
 * # Safety
 * `graph` must be a live handle; `out` a valid pointer.
 */
enum OtthomStatus otthom_graph_to_json(const struct OtthomGraph *graph, char **out);

/**
 * # Safety
 * `graph` must be a live handle; the out-pointers valid.
 */
enum OtthomStatus otthom_graph_size(const struct OtthomGraph *graph,
                                    size_t *num_vertices,
                                    size_t *num_edges);

/**
 * Copies vertex positions, row-major `num_vertices × dim`, into `buf`.
 *
 * # Safety
 * `graph` must be a live handle; `buf` must hold `len` doubles.
 */
enum OtthomStatus otthom_graph_positions(const struct OtthomGraph *graph, double *buf, size_t len);

/**
 * # Safety
 * `graph` must be null or a handle from this library, not yet freed.
 */
void otthom_graph_free(struct OtthomGraph *graph);

/**
 * `F(m, J)`, or `G(m, J)` when `degree_normalized` is nonzero. `m` has one
 * entry per vertex, `j` one per edge in the graph's orientation.
 *
 * # Safety
 * `graph` must be a live handle; the arrays must have the given lengths.
 */
enum OtthomStatus otthom_energy(const struct OtthomGraph *graph,
                                const double *m,
                                size_t m_len,
                                const double *j,
                                size_t j_len,
                                int32_t degree_normalized,
                                double *out);

/**
 * Cell value `f_ε(v)` on the unit cube for the family in `family_json`.
 *
 * # Safety
 * `family_json` must be a NUL-terminated string; `v` must hold `dim`
 * doubles; `out` a valid pointer.
 */
enum OtthomStatus otthom_cell_value(const char *family_json,
                                    const double *v,
                                    size_t dim,
                                    double eps,
                                    double tol,
                                    double *out);

/**
 * Minimal discrete action between `m0` and `m1` with `steps` steps on
 * `[0, total_time]`.
 *
 * # Safety
 * `graph` must be a live handle; `m0` and `m1` must hold `len` doubles.
 */
enum OtthomStatus otthom_geodesic_action(const struct OtthomGraph *graph,
                                         const double *m0,
                                         const double *m1,
                                         size_t len,
                                         size_t steps,
                                         double total_time,
                                         double tol,
                                         double *out);

/**
 * Parses a density model from JSON.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` a valid pointer.
 */
enum OtthomStatus otthom_density_model_from_json(const char *json, struct OtthomDensityModel **out);

/**
 * Isotropic model `f(v) = |v|²` sampled on `m` direction pairs.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum OtthomStatus otthom_density_model_isotropic(size_t dim,
                                                 size_t m,
                                                 struct OtthomDensityModel **out);

/**
 * # Safety
 * `model` must be a live handle; `v` must hold `dim` doubles.
 */
enum OtthomStatus otthom_density_model_eval(const struct OtthomDensityModel *model,
                                            const double *v,
                                            size_t dim,
                                            double *out);

/**
 * # Safety
 * `model` must be null or a handle from this library, not yet freed.
 */
void otthom_density_model_free(struct OtthomDensityModel *model);

/**
 * Runs an experiment from its JSON config. `passed` receives 1 when all
 * assertions hold; `csv_out`, if not null, receives the CSV text (free it
 * with [`otthom_string_free`]).
 *
 * # Safety
 * `config_json` must be a NUL-terminated string; `passed` a valid pointer;
 * `csv_out` null or valid.
 */
enum OtthomStatus otthom_experiment_run(const char *config_json, int32_t *passed, char **csv_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OTTHOM_H */
