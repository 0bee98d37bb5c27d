#ifndef AWEKIT_H
#define AWEKIT_H

#include <stddef.h>
#include <stdint.h>

typedef enum AwekitNormalization {
  AWEKIT_NORMALIZATION_NONE = 0,
  AWEKIT_NORMALIZATION_PER_UTTERANCE = 1,
  AWEKIT_NORMALIZATION_PER_SPEAKER = 2,
} AwekitNormalization;

typedef enum AwekitStatus {
  AWEKIT_STATUS_OK = 0,
  AWEKIT_STATUS_NULL_POINTER = 1,
  AWEKIT_STATUS_INVALID_ARGUMENT = 2,
  AWEKIT_STATUS_MISSING_FILE = 3,
  AWEKIT_STATUS_IO = 4,
  AWEKIT_STATUS_INVALID_DATA = 5,
  AWEKIT_STATUS_SHAPE = 6,
  AWEKIT_STATUS_NUMERICAL = 7,
  AWEKIT_STATUS_INSUFFICIENT_DATA = 8,
  AWEKIT_STATUS_CHECKPOINT = 9,
  AWEKIT_STATUS_CONFIG = 10,
  AWEKIT_STATUS_BUFFER_TOO_SMALL = 11,
  AWEKIT_STATUS_PANIC = 12,
} AwekitStatus;

// A loaded corpus of feature sequences.
typedef struct AwekitCorpus AwekitCorpus;

// A fixed-size embedder: meanpool, subsample or a trained checkpoint.
typedef struct AwekitEmbedder AwekitEmbedder;

// Result of a subsequence DTW search.
typedef struct AwekitDtwMatch {
  double cost;
  // First utterance frame of the matched region.
  size_t start;
  // One past the last matched frame.
  size_t end;
} AwekitDtwMatch;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *awekit_version(void);

// Message of the last failure on this thread, or NULL if none. The pointer
// stays valid until the next failing call on this thread.
const char *awekit_last_error(void);

// # Safety
// `manifest` must be a NUL-terminated string and `out` a valid pointer.
enum AwekitStatus awekit_corpus_load(const char *manifest, struct AwekitCorpus **out);

// Writes a normalized copy of `corpus` to `out`.
//
// # Safety
// `corpus` must come from this library; `out` must be valid.
enum AwekitStatus awekit_corpus_normalize(const struct AwekitCorpus *corpus,
                                          enum AwekitNormalization mode,
                                          struct AwekitCorpus **out);

// Number of utterances; 0 for NULL.
//
// # Safety
// `corpus` must be NULL or come from this library.
size_t awekit_corpus_len(const struct AwekitCorpus *corpus);

// Feature dimension; 0 for NULL or an empty corpus.
//
// # Safety
// `corpus` must be NULL or come from this library.
size_t awekit_corpus_dim(const struct AwekitCorpus *corpus);

// # Safety
// `corpus` must be NULL or come from this library, and not be used again.
void awekit_corpus_free(struct AwekitCorpus *corpus);

// # Safety
// `out` must be a valid pointer.
enum AwekitStatus awekit_embedder_meanpool(struct AwekitEmbedder **out);

// # Safety
// `out` must be a valid pointer.
enum AwekitStatus awekit_embedder_subsample(size_t k, struct AwekitEmbedder **out);

// Loads a trained checkpoint of either precision.
//
// # Safety
// `checkpoint` must be a NUL-terminated string and `out` a valid pointer.
enum AwekitStatus awekit_embedder_load(const char *checkpoint, struct AwekitEmbedder **out);

// Embedding size for inputs of `input_dim` features; 0 for NULL.
//
// # Safety
// `embedder` must be NULL or come from this library.
size_t awekit_embedder_output_dim(const struct AwekitEmbedder *embedder, size_t input_dim);

// Embeds one frame matrix into `out`, which holds `out_len` floats. If the
// buffer is too small nothing is written, `*written` receives the needed
// size and the status is `BufferTooSmall`.
//
// # Safety
// `frames` must hold `n_frames * dim` floats and `out` `out_len` floats.
enum AwekitStatus awekit_embed(const struct AwekitEmbedder *embedder,
                               const float *frames,
                               size_t n_frames,
                               size_t dim,
                               float *out,
                               size_t out_len,
                               size_t *written);

// # Safety
// `embedder` must be NULL or come from this library, and not be used again.
void awekit_embedder_free(struct AwekitEmbedder *embedder);

// Path-length-normalized DTW cost between two whole sequences.
//
// # Safety
// `a` and `b` must hold `n_a * dim` and `n_b * dim` floats.
enum AwekitStatus awekit_dtw_cost(const float *a,
                                  size_t n_a,
                                  const float *b,
                                  size_t n_b,
                                  size_t dim,
                                  double *cost);

// Best match of `template` anywhere inside `utterance`.
//
// # Safety
// Buffers must hold `n * dim` floats; `result` must be valid.
enum AwekitStatus awekit_dtw_search(const float *template_,
                                    size_t n_template,
                                    const float *utterance,
                                    size_t n_utterance,
                                    size_t dim,
                                    struct AwekitDtwMatch *result);

// Average precision of a ranking given as relevance flags in rank order.
// `n_relevant` counts all relevant items, including any not ranked.
//
// # Safety
// `relevant` must hold `n` bytes; `ap` must be valid.
enum AwekitStatus awekit_average_precision(const uint8_t *relevant,
                                           size_t n,
                                           size_t n_relevant,
                                           double *ap);

// Scores every keyword in `templates` against `search` with `embedder` and
// default windows, writing detections as JSON lines to `out_path`. Corpora
// are used as given; normalize them first if needed.
//
// # Safety
// Handles must come from this library; `out_path` must be NUL-terminated.
enum AwekitStatus awekit_search(const struct AwekitEmbedder *embedder,
                                const struct AwekitCorpus *templates,
                                const struct AwekitCorpus *search,
                                const char *out_path);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AWEKIT_H */
