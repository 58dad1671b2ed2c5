#ifndef GAPCAST_H
#define GAPCAST_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum GapcastStatus {
  GAPCAST_STATUS_OK = 0,
  GAPCAST_STATUS_NULL_ARGUMENT = 1,
  GAPCAST_STATUS_INVALID_ARGUMENT = 2,
  GAPCAST_STATUS_IO = 3,
  GAPCAST_STATUS_PARSE = 4,
  GAPCAST_STATUS_DATA = 5,
  GAPCAST_STATUS_PANIC = 6,
} GapcastStatus;

// Breakpoint table used for AQI conversion.
typedef struct GapcastBreakpoints GapcastBreakpoints;

// Trained per-(station, pollutant) imputers.
typedef struct GapcastImputer GapcastImputer;

// Hourly station panel.
typedef struct GapcastPanel GapcastPanel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread; empty after a success.
// Valid until the next call into the library on the same thread.
const char *gapcast_last_error(void);

// Library version as a static NUL-terminated string.
const char *gapcast_version(void);

void gapcast_string_free(char *s);

// The built-in EPA-style breakpoint table.
enum GapcastStatus gapcast_breakpoints_default(struct GapcastBreakpoints **out);

enum GapcastStatus gapcast_breakpoints_load(const char *path, struct GapcastBreakpoints **out);

void gapcast_breakpoints_free(struct GapcastBreakpoints *table);

// AQI sub-index of one concentration. `pollutant` uses the CSV column
// names (`no2`, `co`, `so2`, `o3`, `pm1_0`, `pm2_5`, `pm10`).
enum GapcastStatus gapcast_subindex(const struct GapcastBreakpoints *table,
                                    const char *pollutant,
                                    double concentration,
                                    double *out);

// Read a station CSV and aggregate it to hourly means.
enum GapcastStatus gapcast_panel_load_csv(const char *path, struct GapcastPanel **out);

void gapcast_panel_free(struct GapcastPanel *panel);

// Writes stations, channels and hours of `panel`.
enum GapcastStatus gapcast_panel_shape(const struct GapcastPanel *panel,
                                       size_t *n_stations,
                                       size_t *n_channels,
                                       size_t *n_hours);

// Station id at `index`, as a caller-owned string.
enum GapcastStatus gapcast_panel_station_id(const struct GapcastPanel *panel,
                                            size_t index,
                                            char **out);

// Channel name at `index` (`pm2_5`, `temperature`, `aqi`, ...), as a
// caller-owned string.
enum GapcastStatus gapcast_panel_channel_name(const struct GapcastPanel *panel,
                                              size_t index,
                                              char **out);

// One cell. `present` is set to false (and `value` to 0) for a gap.
enum GapcastStatus gapcast_panel_get(const struct GapcastPanel *panel,
                                     size_t station,
                                     size_t channel,
                                     size_t hour,
                                     double *value,
                                     bool *present);

// Station AQI for every hour, written station-major into `values` and
// `present` (each of length `len` = stations x hours).
enum GapcastStatus gapcast_panel_station_aqi(const struct GapcastPanel *panel,
                                             const struct GapcastBreakpoints *table,
                                             double *values,
                                             bool *present,
                                             size_t len);

// Train imputers on `panel`. `params_json` may be null for defaults.
enum GapcastStatus gapcast_imputer_train(const struct GapcastPanel *panel,
                                         const char *params_json,
                                         struct GapcastImputer **out);

enum GapcastStatus gapcast_imputer_load(const char *path, struct GapcastImputer **out);

enum GapcastStatus gapcast_imputer_save(const struct GapcastImputer *imputer, const char *path);

// Number of trained (station, pollutant) models.
enum GapcastStatus gapcast_imputer_len(const struct GapcastImputer *imputer, size_t *out);

void gapcast_imputer_free(struct GapcastImputer *imputer);

// Fill gaps in `panel`, returning a new panel handle.
enum GapcastStatus gapcast_impute(const struct GapcastPanel *panel,
                                  const struct GapcastImputer *imputer,
                                  struct GapcastPanel **out);

// Run every configured pipeline run from a JSON config file and return
// the report CSV as a caller-owned string.
enum GapcastStatus gapcast_eval(const char *config_path, char **report_csv);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GAPCAST_H */
