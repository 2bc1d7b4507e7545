#pragma once

// Prediction post-processing chain, applied in this order:
//   1. sliding median filter (odd window, replicated edges)
//   2. centering on the reference mean
//   3. rescaling to the reference standard deviation
//   4. shifting the reference forward in time by `lag` frames, i.e. pairing
//      prediction[n] with reference[n + lag] over the overlap.
// chain_search picks the window and lag that maximise CCC on a tuning trace
// and returns a frozen config that can be replayed on held-out traces.

#include <filesystem>
#include <string>
#include <vector>

#include "cavf/linalg.hpp"

namespace cavf {

struct PredictionTrace {
  Vector values;
  double frame_period = 0.04;  // seconds
};

struct PostprocGrid {
  // Window candidates in frames; even or oversized entries are skipped.
  std::vector<std::size_t> windows{1, 11, 25, 51, 101, 251, 501};
  // Lag candidates in frames; lags leaving fewer than two overlapping frames are skipped.
  std::vector<std::size_t> lags = default_lags();

  static std::vector<std::size_t> default_lags(std::size_t max_lag = 250);
};

struct PostprocConfig {
  std::size_t median_window = 1;
  double bias = 0.0;    // added after filtering
  double scale = 1.0;   // applied about `pivot`
  double pivot = 0.0;
  std::size_t lag = 0;  // reference shifted forward by this many frames
  double frame_period = 0.04;
  PostprocGrid grid;

  static PostprocConfig identity() { return {}; }
  void validate() const;
};

PredictionTrace median_filter(const PredictionTrace& t, std::size_t window);
PredictionTrace center(const PredictionTrace& t, const PredictionTrace& reference);
PredictionTrace scale_match(const PredictionTrace& t, const PredictionTrace& reference);

// CCC of prediction[0, n-lag) against reference[lag, n).
double lagged_ccc(const Vector& prediction, const Vector& reference, std::size_t lag);

struct LagResult {
  std::size_t lag = 0;
  double ccc = 0.0;
};
LagResult best_lag(const PredictionTrace& t, const PredictionTrace& reference,
                   const std::vector<std::size_t>& lags);

struct ChainResult {
  PostprocConfig config;
  PredictionTrace processed;  // full length, before lag pairing
  double ccc = 0.0;
};

// Exhaustive search over grid.windows x grid.lags. The unprocessed trace is
// the first candidate, so the result never scores below the raw CCC. Windows
// are evaluated in parallel and reduced in grid order (smallest window, then
// smallest lag, wins ties).
ChainResult chain_search(const PredictionTrace& t, const PredictionTrace& reference,
                         const PostprocGrid& grid = {});

// Frozen replay of steps 1-3; the lag is applied by frozen_ccc.
PredictionTrace apply_postproc(const PostprocConfig& c, const PredictionTrace& t);
double frozen_ccc(const PostprocConfig& c, const PredictionTrace& t, const PredictionTrace& reference);

void save_postproc_config(const PostprocConfig& c, const std::filesystem::path& path);
PostprocConfig load_postproc_config(const std::filesystem::path& path);
std::string format_postproc_config(const PostprocConfig& c);
PostprocConfig parse_postproc_config(const std::string& text);

namespace serial {
PredictionTrace median_filter(const PredictionTrace& t, std::size_t window);
ChainResult chain_search(const PredictionTrace& t, const PredictionTrace& reference,
                         const PostprocGrid& grid = {});
}  // namespace serial

}  // namespace cavf
