/* twnet C API: flow windowing, feature extraction, and model scoring. */

#ifndef TWNET_H
#define TWNET_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Protocol code for TCP flows.
 */
#define TWNET_PROTOCOL_TCP 0

/**
 * Protocol code for UDP flows.
 */
#define TWNET_PROTOCOL_UDP 1

/**
 * Protocol code for every other protocol.
 */
#define TWNET_PROTOCOL_OTHER 2

/**
 * Status code returned by every fallible call.
 */
typedef enum TwnetStatus {
  TWNET_STATUS_OK = 0,
  TWNET_STATUS_NULL_POINTER = 1,
  TWNET_STATUS_INVALID_STRING = 2,
  TWNET_STATUS_INVALID_ARGUMENT = 3,
  /**
   * Flow timestamps must be non-decreasing per windower.
   */
  TWNET_STATUS_OUT_OF_ORDER = 4,
  TWNET_STATUS_IO = 5,
  TWNET_STATUS_PARSE = 6,
  TWNET_STATUS_INTERNAL = 7,
} TwnetStatus;

/**
 * Opaque loaded model checkpoint.
 */
typedef struct TwnetModel TwnetModel;

/**
 * Opaque streaming window engine.
 */
typedef struct TwnetWindower TwnetWindower;

/**
 * One flow record. Host identifiers are NUL-terminated UTF-8 strings
 * compared only for equality; `protocol` is one of the `TWNET_PROTOCOL_*`
 * codes; `duration` is seconds.
 */
typedef struct TwnetFlow {
  double timestamp;
  const char *src_ip;
  const char *dst_ip;
  uint16_t src_port;
  uint16_t dst_port;
  uint8_t protocol;
  double duration;
  uint64_t src_packets;
  uint64_t dst_packets;
  uint64_t src_bytes;
  uint64_t dst_bytes;
} TwnetFlow;

/**
 * Frozen window information for one flow: counts exclude the flow itself.
 */
typedef struct TwnetSample {
  uint8_t new_port_src;
  uint8_t new_port_dst;
  uint64_t src_flow_count;
  uint64_t dst_flow_count;
  uint64_t src_port_count;
  uint64_t dst_port_count;
} TwnetSample;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copy the last error message for this thread into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length in bytes excluding
 * the terminator.
 *
 * # Safety
 * `buf` must point to `len` writable bytes, or be null (query mode).
 */
uintptr_t twnet_last_error(char *buf, uintptr_t len);

/**
 * Create a streaming windower. `max_hosts` of 0 keeps every host; otherwise
 * the least-recently-anchored host is dropped beyond the bound (minimum 2).
 *
 * # Safety
 * `out` must be a valid pointer to receive the handle.
 */
enum TwnetStatus twnet_windower_new(double window_seconds,
                                    uintptr_t max_hosts,
                                    struct TwnetWindower **out);

/**
 * Process one flow (timestamps must be non-decreasing) and write its frozen
 * window sample to `out`.
 *
 * # Safety
 * `windower` must be a live handle; `flow` and `out` must be valid.
 */
enum TwnetStatus twnet_windower_push(struct TwnetWindower *windower,
                                     const struct TwnetFlow *flow,
                                     struct TwnetSample *out);

/**
 * Number of hosts currently tracked, or 0 for a null handle.
 *
 * # Safety
 * `windower` must be a live handle or null.
 */
uintptr_t twnet_windower_host_count(const struct TwnetWindower *windower);

/**
 * Release a windower handle.
 *
 * # Safety
 * `windower` must come from `twnet_windower_new` and not be freed twice.
 */
void twnet_windower_free(struct TwnetWindower *windower);

/**
 * Compute the 20 derived features and the (TCP, UDP, OTHER) one-hot mask
 * for a flow plus its window sample. `out_features` receives 20 values,
 * `out_mask` 3 values.
 *
 * # Safety
 * `out_features` must point to 20 writable f64, `out_mask` to 3.
 */
enum TwnetStatus twnet_features_extract(const struct TwnetFlow *flow,
                                        const struct TwnetSample *sample,
                                        double *out_features,
                                        double *out_mask);

/**
 * Load a model checkpoint from a file path.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be valid.
 */
enum TwnetStatus twnet_model_load(const char *path, struct TwnetModel **out);

/**
 * Release a model handle.
 *
 * # Safety
 * `model` must come from `twnet_model_load` and not be freed twice.
 */
void twnet_model_free(struct TwnetModel *model);

/**
 * Number of classes the model scores, or 0 for a null handle.
 *
 * # Safety
 * `model` must be a live handle or null.
 */
uintptr_t twnet_model_class_count(const struct TwnetModel *model);

/**
 * Copy the name of class `index` into `buf` (NUL-terminated, truncated to
 * `len` bytes).
 *
 * # Safety
 * `model` must be a live handle; `buf` must point to `len` writable bytes.
 */
enum TwnetStatus twnet_model_class_name(const struct TwnetModel *model,
                                        uintptr_t index,
                                        char *buf,
                                        uintptr_t len);

/**
 * Pre-softmax class scores for one flow plus its window sample.
 * `scores_len` must equal the model's class count.
 *
 * # Safety
 * `model` must be a live handle; `out_scores` must point to `scores_len`
 * writable f64.
 */
enum TwnetStatus twnet_model_score(const struct TwnetModel *model,
                                   const struct TwnetFlow *flow,
                                   const struct TwnetSample *sample,
                                   double *out_scores,
                                   uintptr_t scores_len);

/**
 * Predicted class index (argmax of the scores, ties to the lowest index).
 *
 * # Safety
 * `model` must be a live handle; `out_class` must be valid.
 */
enum TwnetStatus twnet_model_predict(const struct TwnetModel *model,
                                     const struct TwnetFlow *flow,
                                     const struct TwnetSample *sample,
                                     uintptr_t *out_class);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TWNET_H */
