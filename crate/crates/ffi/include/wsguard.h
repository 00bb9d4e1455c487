#ifndef WSGUARD_H
#define WSGUARD_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  WSG_STATUS_OK = 0,
  /**
   * A required pointer argument was NULL.
   */
  WSG_STATUS_NULL_ARGUMENT = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  WSG_STATUS_INVALID_UTF8 = 2,
  /**
   * Rule text, JSON or other input failed to parse.
   */
  WSG_STATUS_PARSE = 3,
  WSG_STATUS_IO = 4,
  /**
   * An argument was out of range or inconsistent.
   */
  WSG_STATUS_INVALID_ARGUMENT = 5,
  /**
   * Model loading or inference failed.
   */
  WSG_STATUS_MODEL = 6,
  /**
   * A Rust panic was caught at the boundary.
   */
  WSG_STATUS_PANIC = 7,
} WsgStatus;

typedef enum {
  WSG_LANGUAGE_PHP = 0,
  WSG_LANGUAGE_CIL = 1,
} WsgLanguage;

/**
 * Inspection daemon state: model, rule book and blacklist.
 */
typedef struct WsgInspector WsgInspector;

/**
 * Compiled signature rules.
 */
typedef struct WsgRules WsgRules;

/**
 * Percentages in `[0, 100]`; undefined ratios are 0.
 */
typedef struct {
  double accuracy;
  double precision;
  double recall;
  double specificity;
  double f1;
  double fpr;
  double fnr;
} WsgMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. Owned by the
 * library and valid until the next call on this thread.
 */
const char *wsg_last_error(void);

/**
 * Releases a string returned by this library. NULL is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void wsg_string_free(char *s);

/**
 * Library version, static storage.
 */
const char *wsg_version(void);

/**
 * Compiles rule source text.
 *
 * # Safety
 * `text` must be a NUL-terminated string; `out` a writable pointer.
 */
WsgStatus wsg_rules_compile(const char *text, WsgRules **out);

/**
 * Loads a rule file or a directory of `.yar`/`.yara` files.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` a writable pointer.
 */
WsgStatus wsg_rules_load(const char *path, WsgRules **out);

/**
 * Number of rules in the set.
 *
 * # Safety
 * `rules` must be a live handle or NULL (gives 0).
 */
size_t wsg_rules_count(const WsgRules *rules);

/**
 * Matches `len` bytes at `data`. `*matched` is set to whether any rule
 * matched and, when `names_json` is not NULL, it receives a JSON array of
 * the matching rule names (free with [`wsg_string_free`]).
 *
 * # Safety
 * `rules` must be a live handle, `data` readable for `len` bytes,
 * `matched` writable and `names_json` NULL or writable.
 */
WsgStatus wsg_rules_match(const WsgRules *rules,
                          const uint8_t *data,
                          size_t len,
                          bool *matched,
                          char **names_json);

/**
 * Releases a rule set. NULL is ignored.
 *
 * # Safety
 * `rules` must come from this library and not have been freed.
 */
void wsg_rules_free(WsgRules *rules);

/**
 * Classification metrics from confusion-matrix counts, unrounded.
 *
 * # Safety
 * `out` must be writable.
 */
WsgStatus wsg_metrics(uint64_t true_pos,
                      uint64_t false_pos,
                      uint64_t false_neg,
                      uint64_t true_neg,
                      WsgMetrics *out);

/**
 * Inverse-frequency class weights `total / (2 * n_class)`.
 *
 * # Safety
 * `benign_weight` and `webshell_weight` must be writable.
 */
WsgStatus wsg_class_weights(uint64_t n_benign,
                            uint64_t n_webshell,
                            double *benign_weight,
                            double *webshell_weight);

/**
 * Opcode index vector of a disassembly listing against the shipped
 * vocabulary for `language`. Writes exactly `max_length` indices to `out`
 * (zero padded) and the number of opcodes found, before truncation, to
 * `used` when it is not NULL.
 *
 * # Safety
 * `listing` must be a NUL-terminated string, `out` writable for
 * `max_length` elements and `used` NULL or writable.
 */
WsgStatus wsg_oiva(WsgLanguage language,
                   const char *listing,
                   size_t max_length,
                   uint32_t *out,
                   size_t *used);

/**
 * Creates an inspector. `config_json` (NULL for defaults) is a JSON object
 * of daemon settings; `model_path` (NULL to use the config's) names a
 * trained flow model or a JSON stub. An existing rule file in the rules
 * directory is continued.
 *
 * # Safety
 * String arguments must be NULL or NUL-terminated; `out` writable.
 */
WsgStatus wsg_inspector_new(const char *config_json, const char *model_path, WsgInspector **out);

/**
 * Answers one daemon protocol request (`{"op":"inspect","pcap_path":...}`,
 * `{"op":"ping"}`, `{"op":"blacklist"}`) with a JSON reply in `*reply`.
 * Protocol-level failures are reported inside the reply as `{"error":...}`
 * with status OK.
 *
 * # Safety
 * `inspector` must be a live handle, `request` NUL-terminated and `reply`
 * writable.
 */
WsgStatus wsg_inspector_request(const WsgInspector *inspector, const char *request, char **reply);

/**
 * Inspects one pcap file. The rule file is rewritten when rules change and
 * `*result_json` receives `{"alerts","rules","stats"}`.
 *
 * # Safety
 * `inspector` must be a live handle, `pcap_path` NUL-terminated and
 * `result_json` writable.
 */
WsgStatus wsg_inspector_inspect(const WsgInspector *inspector,
                                const char *pcap_path,
                                char **result_json);

/**
 * Releases an inspector. NULL is ignored.
 *
 * # Safety
 * `inspector` must come from this library and not have been freed.
 */
void wsg_inspector_free(WsgInspector *inspector);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* WSGUARD_H */
