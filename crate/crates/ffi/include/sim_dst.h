#ifndef SIM_DST_H
#define SIM_DST_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes. Zero is success.
typedef enum SimStatus {
  SIM_STATUS_OK = 0,
  SIM_STATUS_NULL_POINTER = 1,
  SIM_STATUS_INVALID_UTF8 = 2,
  SIM_STATUS_INVALID_INPUT = 3,
  SIM_STATUS_IO = 4,
  SIM_STATUS_CHECKPOINT = 5,
  SIM_STATUS_CONFIG = 6,
  SIM_STATUS_INTERNAL = 7,
} SimStatus;

// A loaded model with its word vectors.
typedef struct SimModelHandle SimModelHandle;

// An ontology encoded by a particular model.
typedef struct SimOntologyHandle SimOntologyHandle;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread; empty after a success.
// The pointer stays valid until the next library call on this thread.
const char *sim_dst_last_error(void);

// Loads a checkpoint and GloVe-format word vectors.
//
// # Safety
// Paths must be NUL-terminated strings; `out` must be writable.
enum SimStatus sim_dst_model_load(const char *checkpoint_path,
                                  const char *embeddings_path,
                                  struct SimModelHandle **out);

// # Safety
// `model` must come from [`sim_dst_model_load`] and not be used afterwards.
void sim_dst_model_free(struct SimModelHandle *model);

// Number of trainable parameters (the frozen word table excluded).
//
// # Safety
// `model` must be a live handle; `out` must be writable.
enum SimStatus sim_dst_model_parameter_count(const struct SimModelHandle *model, size_t *out);

// Encodes an ontology given as JSON (`{"informable": {slot: [values]},
// "requestable": [slots]}`) with `model`.
//
// # Safety
// `model` must be a live handle, `ontology_json` a NUL-terminated string
// and `out` writable.
enum SimStatus sim_dst_ontology_encode(const struct SimModelHandle *model,
                                       const char *ontology_json,
                                       struct SimOntologyHandle **out);

// # Safety
// `ontology` must come from [`sim_dst_ontology_encode`].
void sim_dst_ontology_free(struct SimOntologyHandle *ontology);

// Scores one turn (`{"tokens": [...], "lemmas"?, "pos"?, "ner"?,
// "system_actions": [[slot, value], ...]}`) against every pair of an
// encoded ontology. Writes a JSON array of `{slot, value, probability}`
// in ontology order to `out_json`.
//
// # Safety
// Handles must be live and `ontology` must have been encoded by `model`;
// `turn_json` must be NUL-terminated and `out_json` writable.
enum SimStatus sim_dst_score_turn(const struct SimModelHandle *model,
                                  const struct SimOntologyHandle *ontology,
                                  const char *turn_json,
                                  char **out_json);

// # Safety
// `s` must come from this library and not be used afterwards.
void sim_dst_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SIM_DST_H */
