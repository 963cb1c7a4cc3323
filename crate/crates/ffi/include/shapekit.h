#ifndef SHAPEKIT_H
#define SHAPEKIT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define SK_PIN_COUNT 25

#define SK_WIRE_FRAME_LEN 29

#define SK_PROFILE_S 0

#define SK_PROFILE_M 1

#define SK_PROFILE_L 2

typedef enum SkStatus {
  SK_STATUS_OK = 0,
  SK_STATUS_NULL_POINTER = 1,
  SK_STATUS_INVALID_ARGUMENT = 2,
  SK_STATUS_NOT_FOUND = 3,
  SK_STATUS_FORMAT_ERROR = 4,
  SK_STATUS_IO_ERROR = 5,
  SK_STATUS_STATE_ERROR = 6,
  SK_STATUS_CRC_ERROR = 7,
  SK_STATUS_PROTOCOL_ERROR = 8,
  SK_STATUS_RANGE_ERROR = 9,
  SK_STATUS_TRACKER_ERROR = 10,
  SK_STATUS_PANIC = 11,
} SkStatus;

// A pattern recording.
typedef struct SkRecording SkRecording;

// The servo-limited display simulator.
typedef struct SkSimDisplay SkSimDisplay;

// A calibrated marker tracker.
typedef struct SkTracker SkTracker;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null. Valid until the
// next call into this library on the same thread.
const char *sk_last_error(void);

// Release a string returned by this library.
//
// # Safety
// `s` must come from this library and not be freed twice.
void sk_string_free(char *s);

// CRC-8/SMBUS of `len` bytes.
//
// # Safety
// `bytes` is null (read as empty) or holds `len` bytes.
uint8_t sk_crc8(const uint8_t *bytes, size_t len);

// Encode a position frame into `out` (`SK_WIRE_FRAME_LEN` bytes).
//
// # Safety
// `positions` holds `SK_PIN_COUNT` bytes, `out` has room for
// `SK_WIRE_FRAME_LEN`.
enum SkStatus sk_encode_frame(uint8_t seq, const uint8_t *positions, uint8_t *out);

// Decode one wire frame, checking framing and CRC.
//
// # Safety
// `bytes` holds `len` bytes; `out_positions` has room for `SK_PIN_COUNT`.
enum SkStatus sk_decode_frame(const uint8_t *bytes,
                              size_t len,
                              uint8_t *out_seq,
                              uint8_t *out_positions);

// Position byte for a height; heights outside the stroke are a range error.
//
// # Safety
// `out` is writable.
enum SkStatus sk_height_to_position(double h_mm, uint32_t profile_id, uint8_t *out);

// Height for a position byte; NaN for an unknown profile.
double sk_position_to_height(uint8_t position, uint32_t profile_id);

uint16_t sk_position_to_pwm_ticks(uint8_t position);

// Per-pin spring force in newtons for a height frame.
//
// # Safety
// `heights` and `out_force_n` hold `SK_PIN_COUNT` doubles.
enum SkStatus sk_static_force(const double *heights, uint32_t profile_id, double *out_force_n);

// Build a recording from `frame_count` frames of `SK_PIN_COUNT` heights.
//
// # Safety
// `heights` holds `frame_count * SK_PIN_COUNT` doubles; `name` is a
// NUL-terminated string.
enum SkStatus sk_recording_new(const char *name,
                               uint32_t profile_id,
                               double rate_hz,
                               const double *heights,
                               size_t frame_count,
                               struct SkRecording **out);

// Ground truth of a named scenario (`wave`, `sequential`, `uniform`,
// `random_walk`) with default parameters.
//
// # Safety
// `scenario` is a NUL-terminated string; `out` is writable.
enum SkStatus sk_recording_simulate(const char *scenario,
                                    double duration_ms,
                                    double rate_hz,
                                    uint32_t profile_id,
                                    struct SkRecording **out);

// # Safety
// `path` is a NUL-terminated string; `out` is writable.
enum SkStatus sk_recording_load(const char *path, struct SkRecording **out);

// # Safety
// `rec` is a live handle; `path` is a NUL-terminated string.
enum SkStatus sk_recording_save(const struct SkRecording *rec, const char *path);

// # Safety
// `rec` is null or a handle from this library, freed once.
void sk_recording_free(struct SkRecording *rec);

// # Safety
// `rec` is null or a live handle.
size_t sk_recording_frame_count(const struct SkRecording *rec);

// # Safety
// `rec` is null or a live handle.
double sk_recording_frame_rate(const struct SkRecording *rec);

// Copy frame `index` into `out_heights`.
//
// # Safety
// `rec` is a live handle; `out_heights` holds `SK_PIN_COUNT` doubles.
enum SkStatus sk_recording_frame(const struct SkRecording *rec, size_t index, double *out_heights);

// Apply height gain then speed factor, producing a new recording.
//
// # Safety
// `rec` is a live handle; `out` is writable.
enum SkStatus sk_recording_tune(const struct SkRecording *rec,
                                double height_gain,
                                double speed_factor,
                                struct SkRecording **out);

// The recording as pattern-file JSON. Free with `sk_string_free`.
//
// # Safety
// `rec` is a live handle; `out` is writable.
enum SkStatus sk_recording_to_json(const struct SkRecording *rec, char **out);

// # Safety
// `out` is writable.
enum SkStatus sk_sim_new(uint32_t profile_id, struct SkSimDisplay **out);

// # Safety
// `sim` is null or a handle from this library, freed once.
void sk_sim_free(struct SkSimDisplay *sim);

// Advance every servo `dt_ms` toward the commanded position bytes and write
// the achieved heights.
//
// # Safety
// `sim` is a live handle; `positions` holds `SK_PIN_COUNT` bytes;
// `out_heights` holds `SK_PIN_COUNT` doubles.
enum SkStatus sk_sim_step(struct SkSimDisplay *sim,
                          const uint8_t *positions,
                          double dt_ms,
                          double *out_heights);

// Play `rec` into the simulator on a simulated clock and report the RMS
// difference, in mm, between commanded and achieved heights.
//
// # Safety
// `sim` and `rec` are live handles; `out_rms_mm` is writable.
enum SkStatus sk_sim_play(struct SkSimDisplay *sim,
                          const struct SkRecording *rec,
                          double *out_rms_mm);

// Render heights through the default synthetic camera into a 640x480
// greyscale buffer.
//
// # Safety
// `heights` holds `SK_PIN_COUNT` doubles; `out_pixels` holds `len` bytes.
enum SkStatus sk_render_frame(const double *heights, uint8_t *out_pixels, size_t len);

// Calibrate a tracker on a greyscale frame with every pin at rest.
//
// # Safety
// `pixels` holds `width * height` bytes; `out` is writable.
enum SkStatus sk_tracker_new(const uint8_t *pixels,
                             uint32_t width,
                             uint32_t height,
                             uint32_t profile_id,
                             struct SkTracker **out);

// # Safety
// `tracker` is null or a handle from this library, freed once.
void sk_tracker_free(struct SkTracker *tracker);

// Track one frame. Lanes with no marker keep their last height and are
// counted in `out_missing`.
//
// # Safety
// `tracker` is a live handle; `pixels` holds `width * height` bytes;
// `out_heights` holds `SK_PIN_COUNT` doubles; `out_missing` is null or
// writable.
enum SkStatus sk_tracker_track(struct SkTracker *tracker,
                               const uint8_t *pixels,
                               uint32_t width,
                               uint32_t height,
                               double t_ms,
                               double *out_heights,
                               uint32_t *out_missing);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SHAPEKIT_H */
