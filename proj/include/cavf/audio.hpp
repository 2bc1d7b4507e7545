#pragma once

// Spectrogram front end: 16 kHz mono audio, 40 ms rectangular frames with a
// 40 ms hop, one-sided |DFT|^2 per frame, dB conversion and whole-matrix
// mean/variance normalisation. A 5.12 s segment yields 128 frames.
//
// Frames longer than the DFT are truncated to its first dft_len samples and
// shorter ones are zero-padded. The default DFT length of 1024 gives 513
// bins; the paper_shape preset uses 256 and gives the 128 x 129 layout.

#include <filesystem>
#include <vector>

#include "cavf/linalg.hpp"

namespace cavf {

struct Waveform {
  Vector samples;
  double sample_rate = 16000.0;
};

struct Spectrogram {
  Matrix data;  // frames x bins
  bool log_scaled = false;
  bool normalized = false;

  std::size_t frames() const { return data.rows(); }
  std::size_t bins() const { return data.cols(); }
};

enum class Taper { rectangular, hann };

struct SpectrogramOptions {
  std::size_t dft_len = 1024;
  double window_s = 0.04;
  double shift_s = 0.04;
  Taper taper = Taper::rectangular;
  double floor_db = 80.0;
  double segment_s = 5.12;

  static SpectrogramOptions paper_shape();
};

inline constexpr double kTargetSampleRate = 16000.0;
// Absolute power floor, used when a spectrogram is entirely silent.
inline constexpr double kAbsolutePowerFloor = 1e-20;

std::vector<Vector> frame_signal(const Waveform& w, double window_s, double shift_s);

// One-sided power spectrum per frame, bins = dft_len / 2 + 1.
Spectrogram spectrogram(const Waveform& w, std::size_t dft_len, double window_s = 0.04,
                        double shift_s = 0.04, Taper taper = Taper::rectangular);

// 10 log10(max(power, floor)), floor = floor_db below the spectrogram peak.
Spectrogram log_power(const Spectrogram& s, double floor_db = 80.0);
Spectrogram mvn_normalize(const Spectrogram& s);

Waveform resample_linear(const Waveform& w, double target_rate);

// Cuts w into whole segments of options.segment_s and returns the
// normalised log-power spectrogram of each.
std::vector<Spectrogram> segment_spectrograms(const Waveform& w, const SpectrogramOptions& options);

// RIFF/WAVE, mono, PCM 8/16/24/32-bit or IEEE float 32/64-bit.
Waveform read_wav(const std::filesystem::path& path);
void write_wav(const std::filesystem::path& path, const Waveform& w);  // 16-bit PCM

namespace serial {
Spectrogram spectrogram(const Waveform& w, std::size_t dft_len, double window_s = 0.04,
                        double shift_s = 0.04, Taper taper = Taper::rectangular);
}  // namespace serial

}  // namespace cavf
