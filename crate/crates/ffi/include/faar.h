#ifndef FAAR_H
#define FAAR_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum FaarStatus {
  FAAR_STATUS_OK = 0,
  FAAR_STATUS_NULL_POINTER = 1,
  FAAR_STATUS_INVALID_ARGUMENT = 2,
  FAAR_STATUS_SHAPE_MISMATCH = 3,
  FAAR_STATUS_NON_FINITE = 4,
  // Not enough epochs, windows or clean data for the requested step.
  FAAR_STATUS_INSUFFICIENT_DATA = 5,
  // Malformed FaarFile or JSON.
  FAAR_STATUS_FORMAT = 6,
  FAAR_STATUS_IO = 7,
  FAAR_STATUS_INTERNAL = 8,
} FaarStatus;

// Epoch batch `[epochs × channels × samples]` in microvolts.
typedef struct FaarEpochs FaarEpochs;

typedef struct FaarRejector FaarRejector;

typedef struct FaarStream FaarStream;

// One streaming decision. `threshold` is `+inf` while nothing can be rejected.
typedef struct FaarDecision {
  uint64_t epoch_id;
  double sqi;
  double threshold;
  bool rejected;
} FaarDecision;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failure on this thread, or null. The
// pointer stays valid until the next failing call on this thread.
const char *faar_last_error(void);

// Library version as a static NUL-terminated string.
const char *faar_version(void);

// Copies a row-major `[n_epochs × n_channels × n_samples]` array of doubles.
//
// # Safety
// `data` must point to `n_epochs * n_channels * n_samples` readable doubles
// and `out` must be a valid pointer to a handle slot.
enum FaarStatus faar_epochs_new(const double *data,
                                size_t n_epochs,
                                size_t n_channels,
                                size_t n_samples,
                                double fs,
                                struct FaarEpochs **out);

// Reads an epochs FaarFile.
//
// # Safety
// `path` must be a NUL-terminated UTF-8 string and `out` a valid handle slot.
enum FaarStatus faar_epochs_read(const char *path, struct FaarEpochs **out);

// # Safety
// `epochs` must be a live handle and `path` a NUL-terminated UTF-8 string.
enum FaarStatus faar_epochs_write(const struct FaarEpochs *epochs, const char *path);

// # Safety
// `epochs` must be a live handle; the output pointers may be null.
enum FaarStatus faar_epochs_shape(const struct FaarEpochs *epochs,
                                  size_t *n_epochs,
                                  size_t *n_channels,
                                  size_t *n_samples);

// # Safety
// `epochs` must be null or a handle not yet freed.
void faar_epochs_free(struct FaarEpochs *epochs);

// Calibrates on `epochs` and picks the knee threshold of their SQIs.
// Pass `sensitivity <= 0` for the default.
//
// # Safety
// `epochs` must be a live handle and `out` a valid handle slot.
enum FaarStatus faar_rejector_fit(const struct FaarEpochs *epochs,
                                  double sensitivity,
                                  struct FaarRejector **out);

// # Safety
// `rejector` must be a live handle and `out` writable.
enum FaarStatus faar_rejector_threshold(const struct FaarRejector *rejector, double *out);

// Scores `epochs` and writes one SQI and one 0/1 verdict per epoch.
// `len` must equal the epoch count; either output may be null.
//
// # Safety
// Handles must be live; non-null outputs must hold `len` elements.
enum FaarStatus faar_rejector_decide(const struct FaarRejector *rejector,
                                     const struct FaarEpochs *epochs,
                                     double *sqi_out,
                                     uint8_t *rejected_out,
                                     size_t len);

// Reference model as JSON; release with `faar_string_free`.
//
// # Safety
// `rejector` must be a live handle and `out` writable.
enum FaarStatus faar_rejector_model_json(const struct FaarRejector *rejector, char **out);

// # Safety
// `rejector` must be null or a handle not yet freed.
void faar_rejector_free(struct FaarRejector *rejector);

// # Safety
// `s` must be null or a string returned by this library and not yet freed.
void faar_string_free(char *s);

// Streaming scorer. Non-positive `warmup_s`, `lambda` or `buffer` select
// the defaults.
//
// # Safety
// `out` must be a valid handle slot.
enum FaarStatus faar_stream_new(double fs,
                                size_t channels,
                                double window_len_s,
                                double epoch_len_s,
                                double warmup_s,
                                double lambda,
                                size_t buffer,
                                struct FaarStream **out);

// Pushes one row-major `[channels × window_samples]` window. When it
// completes an epoch, `*has_decision` is set and `*decision` filled.
//
// # Safety
// `stream` must be live; `window` must hold `len` floats; outputs writable.
enum FaarStatus faar_stream_push(struct FaarStream *stream,
                                 const float *window,
                                 size_t len,
                                 struct FaarDecision *decision,
                                 bool *has_decision);

// # Safety
// `stream` must be null or a handle not yet freed.
void faar_stream_free(struct FaarStream *stream);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FAAR_H */
