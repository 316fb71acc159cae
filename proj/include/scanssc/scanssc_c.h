/*
 * C API for the scanssc shared library: opaque handles, integer status
 * codes, and coarse-grained commands. Every function returns SCANSSC_OK on
 * success; on failure scanssc_last_error() describes the most recent error
 * of the calling thread.
 */
#ifndef SCANSSC_C_H
#define SCANSSC_C_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum scanssc_status {
  SCANSSC_OK = 0,
  SCANSSC_ERR_USAGE = 2,      /* bad arguments, bad config, bad input files */
  SCANSSC_ERR_DIVERGENCE = 3, /* training produced a non-finite loss */
  SCANSSC_ERR_GRADCHECK = 4,  /* a gradient check exceeded its threshold */
  SCANSSC_ERR_ORACLE = 5,     /* an oracle suite exceeded its tolerance */
  SCANSSC_ERR_INTERNAL = 7
} scanssc_status;

const char* scanssc_last_error(void);

/* Frees strings returned through char** out-parameters. */
void scanssc_string_free(char* s);

/* ---- attention masks ------------------------------------------------- */

typedef struct scanssc_mask scanssc_mask;

/* axis: "dep" | "wid" | "hgt". width_mode: "same_side" | "distance_rank"
 * (ignored for other axes). margin_rule: "both" | "either". */
scanssc_status scanssc_mask_build(const char* axis, int64_t length, double margin_ratio,
                                  int flipped, const char* width_mode, const char* margin_rule,
                                  scanssc_mask** out);
int64_t scanssc_mask_length(const scanssc_mask* mask);
/* 1 if query i may not attend key j (0-based), 0 otherwise, -1 on bad args */
int scanssc_mask_blocked(const scanssc_mask* mask, int64_t i, int64_t j);
void scanssc_mask_free(scanssc_mask* mask);

/* ---- run configuration ----------------------------------------------- */

typedef struct scanssc_config scanssc_config;

scanssc_status scanssc_config_create(scanssc_config** out);
scanssc_status scanssc_config_load(const char* path, scanssc_config** out);
scanssc_status scanssc_config_set(scanssc_config* config, const char* key, const char* value);
/* Serialized key = value form; free with scanssc_string_free. */
scanssc_status scanssc_config_dump(const scanssc_config* config, char** out);
void scanssc_config_free(scanssc_config* config);

/* ---- commands --------------------------------------------------------- */

/* Writes a deterministic synthetic scene (preset: corridor|blocks|random)
 * as a voxel grid file. */
scanssc_status scanssc_synth(const char* preset, int64_t x, int64_t y, int64_t z, uint64_t seed,
                             const char* out_path);

/* Toy training; writes the loss log, final logits and metric reports under
 * out_dir. On divergence returns SCANSSC_ERR_DIVERGENCE and stores the
 * offending step in *diverged_step (pass NULL to ignore). */
scanssc_status scanssc_train(const scanssc_config* config, const char* gt_path,
                             const char* out_dir, int64_t* diverged_step);

/* Gradient checks at tiny dims. module: NULL/"all" or one of primitives |
 * scan-loss | objective | scan-module | fixture-bad. The per-group report
 * text is returned through report (free with scanssc_string_free). */
scanssc_status scanssc_gradcheck(const scanssc_config* config, const char* module, char** report);

/* Axis-binned analysis. pred_path may be NULL when logits_path is given
 * (prediction = argmax of the logits). axes: comma list like "dep,wid,hgt".
 * bins: comma triple like "256,256,32". */
scanssc_status scanssc_analyze(const char* pred_path, const char* gt_path,
                               const char* logits_path, const char* axes, const char* bins,
                               int normalize_svg, const char* out_dir);

/* Brute-force oracle suites (masks|scanloss|cumavg|fusion). On deviation
 * beyond tolerance returns SCANSSC_ERR_ORACLE and, when repro_out_path is
 * non-NULL, writes a repro file for replay. max_deviation may be NULL. */
scanssc_status scanssc_oracle(const char* suite, int64_t trials, uint64_t seed,
                              const char* repro_out_path, double* max_deviation);
scanssc_status scanssc_oracle_replay(const char* repro_path, double* max_deviation);

/* Converts between the binary grid formats and flat CSV voxel listings,
 * picking the direction from the file extensions (.sscg/.sscl/.csv). */
scanssc_status scanssc_convert(const char* in_path, const char* out_path);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* SCANSSC_C_H */
