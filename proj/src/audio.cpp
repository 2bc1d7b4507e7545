#include "cavf/audio.hpp"

#include <fftw3.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <memory>
#include <mutex>
#include <numbers>

#include "cavf/errors.hpp"

namespace cavf {

namespace {

std::size_t seconds_to_samples(double seconds, double rate) {
  return static_cast<std::size_t>(std::floor(seconds * rate + 1e-9));
}

struct FftwFree {
  void operator()(void* p) const { fftw_free(p); }
};
using RealBuffer = std::unique_ptr<double[], FftwFree>;
using ComplexBuffer = std::unique_ptr<fftw_complex[], FftwFree>;

RealBuffer alloc_real(std::size_t n) { return RealBuffer(fftw_alloc_real(n)); }
ComplexBuffer alloc_complex(std::size_t n) { return ComplexBuffer(fftw_alloc_complex(n)); }

// Planning mutates FFTW's global state; execution with new arrays is thread-safe.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

class R2cPlan {
 public:
  explicit R2cPlan(std::size_t n) : n_(n) {
    auto in = alloc_real(n);
    auto out = alloc_complex(n / 2 + 1);
    std::lock_guard lock(planner_mutex());
    plan_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), in.get(), out.get(), FFTW_ESTIMATE);
    if (!plan_) throw ConfigError("FFTW could not plan a length-" + std::to_string(n) + " transform");
  }
  ~R2cPlan() {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(plan_);
  }
  R2cPlan(const R2cPlan&) = delete;
  R2cPlan& operator=(const R2cPlan&) = delete;

  // Buffers must come from fftw_alloc_* so their alignment matches the plan.
  void execute(double* in, fftw_complex* out) const { fftw_execute_dft_r2c(plan_, in, out); }
  std::size_t size() const { return n_; }

 private:
  std::size_t n_;
  fftw_plan plan_;
};

struct FrameLayout {
  std::size_t window = 0;
  std::size_t hop = 0;
  std::size_t count = 0;
};

FrameLayout layout(const Waveform& w, double window_s, double shift_s) {
  if (!(window_s > 0.0) || !(shift_s > 0.0)) throw ConfigError("frame window and shift must be positive");
  if (!(w.sample_rate > 0.0)) throw ConfigError("sample rate must be positive");
  FrameLayout f;
  f.window = seconds_to_samples(window_s, w.sample_rate);
  f.hop = seconds_to_samples(shift_s, w.sample_rate);
  if (f.window == 0 || f.hop == 0) throw ConfigError("frame window or shift rounds to zero samples");
  if (w.samples.size() < f.window)
    throw DegenerateError("signal has " + std::to_string(w.samples.size()) +
                          " samples; at least one window of " + std::to_string(f.window) + " is required");
  f.count = (w.samples.size() - f.window) / f.hop + 1;
  return f;
}

void require_dft_len(std::size_t dft_len) {
  if (dft_len < 2 || !std::has_single_bit(dft_len))
    throw ConfigError("dft_len must be a power of two >= 2, got " + std::to_string(dft_len));
}

Vector taper_weights(Taper taper, std::size_t n) {
  Vector wts(n, 1.0);
  if (taper == Taper::hann && n > 1)
    for (std::size_t i = 0; i < n; ++i)
      wts[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n - 1));
  return wts;
}

// Copies frame `f` (tapered, truncated or zero-padded) into `in` and writes
// |X_k|^2 into row f of `out`.
void power_frame(const Waveform& w, const FrameLayout& fl, const Vector& wts, const R2cPlan& plan,
                 std::size_t f, double* in, fftw_complex* spec, Matrix& out) {
  const std::size_t n = plan.size();
  const std::size_t used = std::min(fl.window, n);
  const std::size_t start = f * fl.hop;
  for (std::size_t i = 0; i < used; ++i) in[i] = w.samples[start + i] * wts[i];
  std::fill(in + used, in + n, 0.0);
  plan.execute(in, spec);
  auto row = out.row(f);
  for (std::size_t k = 0; k < row.size(); ++k) row[k] = spec[k][0] * spec[k][0] + spec[k][1] * spec[k][1];
}

std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}
std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | p[1] << 8);
}

}  // namespace

SpectrogramOptions SpectrogramOptions::paper_shape() {
  SpectrogramOptions o;
  o.dft_len = 256;
  return o;
}

std::vector<Vector> frame_signal(const Waveform& w, double window_s, double shift_s) {
  const FrameLayout fl = layout(w, window_s, shift_s);
  std::vector<Vector> frames(fl.count);
  for (std::size_t f = 0; f < fl.count; ++f) {
    const auto begin = w.samples.begin() + static_cast<std::ptrdiff_t>(f * fl.hop);
    frames[f].assign(begin, begin + static_cast<std::ptrdiff_t>(fl.window));
  }
  return frames;
}

Spectrogram spectrogram(const Waveform& w, std::size_t dft_len, double window_s, double shift_s,
                        Taper taper) {
  require_dft_len(dft_len);
  const FrameLayout fl = layout(w, window_s, shift_s);
  const R2cPlan plan(dft_len);
  const Vector wts = taper_weights(taper, std::min(fl.window, dft_len));
  Spectrogram s;
  s.data = Matrix(fl.count, dft_len / 2 + 1);
  const auto count = static_cast<std::ptrdiff_t>(fl.count);
#pragma omp parallel if (fl.count > 8)
  {
    auto in = alloc_real(dft_len);
    auto spec = alloc_complex(dft_len / 2 + 1);
#pragma omp for schedule(static)
    for (std::ptrdiff_t f = 0; f < count; ++f)
      power_frame(w, fl, wts, plan, static_cast<std::size_t>(f), in.get(), spec.get(), s.data);
  }
  return s;
}

namespace serial {

Spectrogram spectrogram(const Waveform& w, std::size_t dft_len, double window_s, double shift_s,
                        Taper taper) {
  require_dft_len(dft_len);
  const FrameLayout fl = layout(w, window_s, shift_s);
  const R2cPlan plan(dft_len);
  const Vector wts = taper_weights(taper, std::min(fl.window, dft_len));
  Spectrogram s;
  s.data = Matrix(fl.count, dft_len / 2 + 1);
  auto in = alloc_real(dft_len);
  auto spec = alloc_complex(dft_len / 2 + 1);
  for (std::size_t f = 0; f < fl.count; ++f) power_frame(w, fl, wts, plan, f, in.get(), spec.get(), s.data);
  return s;
}

}  // namespace serial

Spectrogram log_power(const Spectrogram& s, double floor_db) {
  double peak = 0.0;
  for (double v : s.data.data()) {
    if (v < 0.0) throw DomainError("log_power: negative power");
    peak = std::max(peak, v);
  }
  const double floor = std::max(peak * std::pow(10.0, -floor_db / 10.0), kAbsolutePowerFloor);
  Spectrogram out = s;
  for (double& v : out.data.data()) v = 10.0 * std::log10(std::max(v, floor));
  out.log_scaled = true;
  return out;
}

Spectrogram mvn_normalize(const Spectrogram& s) {
  const auto d = s.data.data();
  if (d.empty()) throw DegenerateError("mvn_normalize: empty spectrogram");
  const double n = static_cast<double>(d.size());
  double total = 0.0;
  for (double v : d) total += v;
  const double mu = total / n;
  double acc = 0.0;
  for (double v : d) acc += (v - mu) * (v - mu);
  const double sd = std::sqrt(acc / n);
  if (!(sd > 0.0)) throw DegenerateError("mvn_normalize: constant spectrogram");
  Spectrogram out = s;
  for (double& v : out.data.data()) v = (v - mu) / sd;
  out.normalized = true;
  return out;
}

Waveform resample_linear(const Waveform& w, double target_rate) {
  if (!(w.sample_rate > 0.0) || !(target_rate > 0.0)) throw ConfigError("sample rates must be positive");
  if (w.sample_rate == target_rate || w.samples.empty()) return {w.samples, target_rate};
  const std::size_t n_in = w.samples.size();
  const auto n_out = static_cast<std::size_t>(
      std::floor(static_cast<double>(n_in) * target_rate / w.sample_rate + 1e-9));
  Waveform out{Vector(n_out), target_rate};
  const double step = w.sample_rate / target_rate;
  for (std::size_t i = 0; i < n_out; ++i) {
    const double pos = static_cast<double>(i) * step;
    const auto lo = std::min(static_cast<std::size_t>(pos), n_in - 1);
    const std::size_t hi = std::min(lo + 1, n_in - 1);
    const double frac = pos - static_cast<double>(lo);
    out.samples[i] = w.samples[lo] + (w.samples[hi] - w.samples[lo]) * frac;
  }
  return out;
}

std::vector<Spectrogram> segment_spectrograms(const Waveform& w, const SpectrogramOptions& options) {
  const Waveform audio = resample_linear(w, kTargetSampleRate);
  const std::size_t seg = seconds_to_samples(options.segment_s, kTargetSampleRate);
  if (seg == 0) throw ConfigError("segment length must be positive");
  if (audio.samples.size() < seg)
    throw DegenerateError("audio is " + std::to_string(static_cast<double>(audio.samples.size()) / kTargetSampleRate) +
                          " s long; at least " + std::to_string(options.segment_s) + " s (" +
                          std::to_string(seg) + " samples at 16 kHz) is required");
  std::vector<Spectrogram> out;
  for (std::size_t start = 0; start + seg <= audio.samples.size(); start += seg) {
    Waveform piece{Vector(audio.samples.begin() + static_cast<std::ptrdiff_t>(start),
                          audio.samples.begin() + static_cast<std::ptrdiff_t>(start + seg)),
                   kTargetSampleRate};
    out.push_back(mvn_normalize(log_power(
        spectrogram(piece, options.dft_len, options.window_s, options.shift_s, options.taper), options.floor_db)));
  }
  return out;
}

Waveform read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read audio file " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw FormatError(path.string() + ": not a RIFF/WAVE file");

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_size = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::uint32_t size = read_u32(chunk + 4);
    const std::size_t body = pos + 8;
    if (body + size > bytes.size()) {
      if (std::memcmp(chunk, "data", 4) != 0) throw FormatError(path.string() + ": truncated chunk");
    }
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16) throw FormatError(path.string() + ": short fmt chunk");
      format = read_u16(chunk + 8);
      channels = read_u16(chunk + 10);
      rate = read_u32(chunk + 12);
      bits = read_u16(chunk + 22);
      if (format == 0xFFFE && size >= 40) format = read_u16(chunk + 32);  // WAVE_FORMAT_EXTENSIBLE
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = chunk + 8;
      data_size = std::min<std::size_t>(size, bytes.size() - body);
    }
    pos = body + size + (size & 1u);
  }
  if (!data || rate == 0) throw FormatError(path.string() + ": missing fmt or data chunk");
  if (channels != 1) throw FormatError(path.string() + ": only mono audio is supported, got " + std::to_string(channels) + " channels");

  const std::size_t width = bits / 8;
  if (width == 0) throw FormatError(path.string() + ": bad sample width");
  const std::size_t count = data_size / width;
  Waveform w{Vector(count), static_cast<double>(rate)};
  for (std::size_t i = 0; i < count; ++i) {
    const unsigned char* p = data + i * width;
    double v = 0.0;
    if (format == 1 && bits == 8) {
      v = (static_cast<double>(p[0]) - 128.0) / 128.0;
    } else if (format == 1 && bits == 16) {
      v = static_cast<std::int16_t>(read_u16(p)) / 32768.0;
    } else if (format == 1 && bits == 24) {
      std::int32_t s = p[0] | p[1] << 8 | p[2] << 16;
      if (s & 0x800000) s -= 0x1000000;
      v = s / 8388608.0;
    } else if (format == 1 && bits == 32) {
      v = static_cast<std::int32_t>(read_u32(p)) / 2147483648.0;
    } else if (format == 3 && bits == 32) {
      v = std::bit_cast<float>(read_u32(p));
    } else if (format == 3 && bits == 64) {
      std::uint64_t u = 0;
      for (int b = 7; b >= 0; --b) u = u << 8 | p[b];
      v = std::bit_cast<double>(u);
    } else {
      throw FormatError(path.string() + ": unsupported encoding (format " + std::to_string(format) + ", " +
                        std::to_string(bits) + " bits)");
    }
    w.samples[i] = v;
  }
  return w;
}

void write_wav(const std::filesystem::path& path, const Waveform& w) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  const auto put32 = [&](std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
  };
  const auto put16 = [&](std::uint16_t v) {
    const unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
    out.write(reinterpret_cast<const char*>(b), 2);
  };
  const auto rate = static_cast<std::uint32_t>(std::lround(w.sample_rate));
  const auto data_bytes = static_cast<std::uint32_t>(w.samples.size() * 2);
  out.write("RIFF", 4);
  put32(36 + data_bytes);
  out.write("WAVEfmt ", 8);
  put32(16);
  put16(1);
  put16(1);
  put32(rate);
  put32(rate * 2);
  put16(2);
  put16(16);
  out.write("data", 4);
  put32(data_bytes);
  for (double v : w.samples) {
    const double clipped = std::clamp(v, -1.0, 32767.0 / 32768.0);
    put16(static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lround(clipped * 32768.0))));
  }
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace cavf
