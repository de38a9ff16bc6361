#ifndef CINESYNTH_H
#define CINESYNTH_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every call.
 */
typedef enum CsStatus {
  CS_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  CS_STATUS_NULL_ARGUMENT = 1,
  /**
   * A string argument was not UTF-8.
   */
  CS_STATUS_INVALID_UTF8 = 2,
  /**
   * The input was well-formed C but rejected by the library.
   */
  CS_STATUS_INVALID_INPUT = 3,
  /**
   * File could not be read or written.
   */
  CS_STATUS_IO = 4,
  /**
   * Internal bug; the library caught a panic.
   */
  CS_STATUS_PANIC = 5,
} CsStatus;

/**
 * Embedded catalog, queried with the hashed embedder it was built with.
 */
typedef struct CsIndex CsIndex;

/**
 * Parsed template together with the slot domains registered on it.
 */
typedef struct CsTemplate CsTemplate;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. Owned by the
 * library; valid until the next call on this thread.
 */
const char *cs_last_error(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void cs_string_free(char *s);

/**
 * Renders an intent training example in the Llama chat format.
 * `label` is `rec` or `non_rec`.
 *
 * # Safety
 * `prompt` and `label` must be valid C strings; `out` must be writable.
 */
enum CsStatus cs_render_intent(const char *prompt, const char *label, char **out);

/**
 * Finds the JSON object in free-form model output and writes it back as
 * compact JSON. With `strict` set no repairs are attempted.
 *
 * # Safety
 * `text` must be a valid C string; `out` must be writable.
 */
enum CsStatus cs_extract_json(const char *text, bool strict, char **out);

/**
 * Macro-F1 over `n` single-label examples. A null entry in `pred` is a parse
 * failure.
 *
 * # Safety
 * `gold` and `pred` must point to `n` entries each; every `gold` entry and
 * every non-null `pred` entry must be a valid C string.
 */
enum CsStatus cs_intent_macro_f1(const char *const *gold,
                                 const char *const *pred,
                                 size_t n,
                                 double *out);

/**
 * Parses a template. Free the handle with [`cs_template_free`].
 *
 * # Safety
 * `src` must be a valid C string; `out` must be writable.
 */
enum CsStatus cs_template_parse(const char *src, struct CsTemplate **out);

/**
 * # Safety
 * `t` must come from [`cs_template_parse`] and not have been freed. Null is ignored.
 */
void cs_template_free(struct CsTemplate *t);

/**
 * Registers the domain of slot `name`: `literal:a|b|c` or `graph:<class>`.
 *
 * # Safety
 * `t` must be a live template handle; strings must be valid C strings.
 */
enum CsStatus cs_template_set_slot(struct CsTemplate *t, const char *name, const char *domain);

/**
 * Canonical source text of the template.
 *
 * # Safety
 * `t` must be a live template handle; `out` must be writable.
 */
enum CsStatus cs_template_to_string(const struct CsTemplate *t, char **out);

/**
 * Number of expansions under the registered literal domains. Fails if a slot
 * is unregistered or graph-backed, or the count exceeds 2^64 - 1.
 *
 * # Safety
 * `t` must be a live template handle; `out` must be writable.
 */
enum CsStatus cs_template_cardinality(const struct CsTemplate *t, uint64_t *out);

/**
 * All expansions as a JSON array of strings, at most `limit` of them.
 *
 * # Safety
 * `t` must be a live template handle; `out` must be writable.
 */
enum CsStatus cs_template_expand(const struct CsTemplate *t, size_t limit, char **out);

/**
 * Embeds a catalog JSONL file (as written by `cinesynth ingest`) with the
 * hashed embedder of dimension `dim`.
 *
 * # Safety
 * `catalog_path` must be a valid C string; `out` must be writable.
 */
enum CsStatus cs_index_build(const char *catalog_path, size_t dim, struct CsIndex **out);

/**
 * Loads an index file written by [`cs_index_save`] or `cinesynth retrieve --save-index`.
 *
 * # Safety
 * `path` must be a valid C string; `out` must be writable.
 */
enum CsStatus cs_index_load(const char *path, struct CsIndex **out);

/**
 * # Safety
 * `idx` must be a live index handle; `path` must be a valid C string.
 */
enum CsStatus cs_index_save(const struct CsIndex *idx, const char *path);

/**
 * # Safety
 * `idx` must be a live index handle; `out` must be writable.
 */
enum CsStatus cs_index_len(const struct CsIndex *idx, size_t *out);

/**
 * Top `k` records for a free-text query, as a JSON array of
 * `{"record_id": ..., "score": ...}` from best to worst.
 *
 * # Safety
 * `idx` must be a live index handle; `query` a valid C string; `out` writable.
 */
enum CsStatus cs_index_query(const struct CsIndex *idx, const char *query, size_t k, char **out);

/**
 * # Safety
 * `idx` must come from this library and not have been freed. Null is ignored.
 */
void cs_index_free(struct CsIndex *idx);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CINESYNTH_H */
