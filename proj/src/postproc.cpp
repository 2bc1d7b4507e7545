#include "cavf/postproc.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include "cavf/errors.hpp"
#include "cavf/metrics.hpp"
#include "cavf/textio.hpp"

namespace cavf {

namespace {

constexpr int kConfigVersion = 1;

void require_window(std::size_t window, std::size_t length) {
  if (window == 0 || window % 2 == 0)
    throw ConfigError("median window must be odd and >= 1, got " + std::to_string(window));
  if (window > length)
    throw ConfigError("median window " + std::to_string(window) + " exceeds trace length " +
                      std::to_string(length));
}

double window_median(const Vector& v, std::size_t i, std::size_t half, Vector& buf) {
  const auto n = static_cast<std::ptrdiff_t>(v.size());
  const auto centre = static_cast<std::ptrdiff_t>(i);
  const auto h = static_cast<std::ptrdiff_t>(half);
  buf.clear();
  for (std::ptrdiff_t k = centre - h; k <= centre + h; ++k)
    buf.push_back(v[static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(k, 0, n - 1))]);
  const auto mid = buf.begin() + h;
  std::nth_element(buf.begin(), mid, buf.end());
  return *mid;
}

struct Candidate {
  PostprocConfig config;
  PredictionTrace processed;
  double ccc = -INFINITY;
};

// Steps 1-3 for one window, then the lag scan. Empty when the filtered
// trace is constant or every lag is degenerate.
template <class MedianFn>
std::optional<Candidate> evaluate_window(const PredictionTrace& t, const PredictionTrace& reference,
                                         const PostprocGrid& grid, std::size_t window,
                                         MedianFn&& median) {
  const PredictionTrace filtered = median(t, window);
  const double bias = mean(reference.values) - mean(filtered.values);
  PredictionTrace centred = filtered;
  for (double& v : centred.values) v += bias;
  const double pivot = mean(centred.values);
  const double spread = stddev(centred.values);
  if (!(spread > 0.0)) return std::nullopt;
  const double scale = stddev(reference.values) / spread;
  PredictionTrace scaled = centred;
  for (double& v : scaled.values) v = pivot + (v - pivot) * scale;

  LagResult lag;
  try {
    lag = best_lag(scaled, reference, grid.lags);
  } catch (const DegenerateError&) {
    return std::nullopt;
  }
  Candidate c;
  c.config.median_window = window;
  c.config.bias = bias;
  c.config.scale = scale;
  c.config.pivot = pivot;
  c.config.lag = lag.lag;
  c.config.frame_period = t.frame_period;
  c.config.grid = grid;
  c.processed = std::move(scaled);
  c.ccc = lag.ccc;
  return c;
}

std::vector<std::size_t> usable_windows(const PostprocGrid& grid, std::size_t length) {
  std::vector<std::size_t> out;
  for (std::size_t w : grid.windows)
    if (w % 2 == 1 && w <= length) out.push_back(w);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

void require_traces(const PredictionTrace& t, const PredictionTrace& reference) {
  if (t.values.empty() || reference.values.empty()) throw DegenerateError("post-processing: empty trace");
  if (t.values.size() != reference.values.size())
    throw ShapeError("post-processing: prediction length " + std::to_string(t.values.size()) +
                     " vs reference length " + std::to_string(reference.values.size()));
}

ChainResult identity_candidate(const PredictionTrace& t, const PredictionTrace& reference,
                               const PostprocGrid& grid) {
  ChainResult r;
  r.config = PostprocConfig::identity();
  r.config.frame_period = t.frame_period;
  r.config.grid = grid;
  r.processed = t;
  r.ccc = ccc(t.values, reference.values).ccc;
  return r;
}

ChainResult reduce(ChainResult best, std::vector<std::optional<Candidate>>& candidates) {
  for (auto& c : candidates)
    if (c && c->ccc > best.ccc) best = {std::move(c->config), std::move(c->processed), c->ccc};
  return best;
}

}  // namespace

std::vector<std::size_t> PostprocGrid::default_lags(std::size_t max_lag) {
  std::vector<std::size_t> lags(max_lag + 1);
  for (std::size_t i = 0; i <= max_lag; ++i) lags[i] = i;
  return lags;
}

void PostprocConfig::validate() const {
  if (median_window == 0 || median_window % 2 == 0)
    throw ConfigError("median_window must be odd and >= 1");
  if (!(scale > 0.0)) throw ConfigError("scale must be positive");
  if (!(frame_period > 0.0)) throw ConfigError("frame_period must be positive");
}

PredictionTrace median_filter(const PredictionTrace& t, std::size_t window) {
  require_window(window, t.values.size());
  PredictionTrace out{Vector(t.values.size()), t.frame_period};
  const std::size_t half = window / 2;
  const auto n = static_cast<std::ptrdiff_t>(t.values.size());
#pragma omp parallel if (t.values.size() * window > (1u << 16))
  {
    Vector buf;
    buf.reserve(window);
#pragma omp for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i)
      out.values[static_cast<std::size_t>(i)] = window_median(t.values, static_cast<std::size_t>(i), half, buf);
  }
  return out;
}

PredictionTrace center(const PredictionTrace& t, const PredictionTrace& reference) {
  if (t.values.empty() || reference.values.empty()) throw DegenerateError("center: empty trace");
  const double bias = mean(reference.values) - mean(t.values);
  PredictionTrace out = t;
  for (double& v : out.values) v += bias;
  return out;
}

PredictionTrace scale_match(const PredictionTrace& t, const PredictionTrace& reference) {
  const double spread = stddev(t.values);
  if (!(spread > 0.0)) throw DegenerateError("scale_match: prediction has zero standard deviation");
  const double pivot = mean(t.values);
  const double ratio = stddev(reference.values) / spread;
  PredictionTrace out = t;
  for (double& v : out.values) v = pivot + (v - pivot) * ratio;
  return out;
}

double lagged_ccc(const Vector& prediction, const Vector& reference, std::size_t lag) {
  if (prediction.size() != reference.size())
    throw ShapeError("lagged_ccc: length mismatch");
  if (lag + 2 > prediction.size())
    throw DegenerateError("lag " + std::to_string(lag) + " leaves fewer than 2 overlapping frames");
  const std::size_t n = prediction.size() - lag;
  return ccc(std::span<const double>(prediction.data(), n), std::span<const double>(reference.data() + lag, n))
      .ccc;
}

LagResult best_lag(const PredictionTrace& t, const PredictionTrace& reference,
                   const std::vector<std::size_t>& lags) {
  require_traces(t, reference);
  std::vector<std::size_t> sorted = lags;
  std::sort(sorted.begin(), sorted.end());
  std::optional<LagResult> best;
  for (std::size_t lag : sorted) {
    if (lag + 2 > t.values.size()) break;
    double c;
    try {
      c = lagged_ccc(t.values, reference.values, lag);
    } catch (const DegenerateError&) {
      continue;
    }
    if (!best || c > best->ccc) best = LagResult{lag, c};
  }
  if (!best) throw DegenerateError("best_lag: every lag candidate is degenerate");
  return *best;
}

ChainResult chain_search(const PredictionTrace& t, const PredictionTrace& reference,
                         const PostprocGrid& grid) {
  require_traces(t, reference);
  const std::vector<std::size_t> windows = usable_windows(grid, t.values.size());
  std::vector<std::optional<Candidate>> candidates(windows.size());
  const auto count = static_cast<std::ptrdiff_t>(windows.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < count; ++i) {
    const auto idx = static_cast<std::size_t>(i);
    candidates[idx] = evaluate_window(t, reference, grid, windows[idx], serial::median_filter);
  }
  return reduce(identity_candidate(t, reference, grid), candidates);
}

PredictionTrace apply_postproc(const PostprocConfig& c, const PredictionTrace& t) {
  c.validate();
  PredictionTrace out = c.median_window == 1 ? t : median_filter(t, c.median_window);
  for (double& v : out.values) {
    v += c.bias;
    v = c.pivot + (v - c.pivot) * c.scale;
  }
  return out;
}

double frozen_ccc(const PostprocConfig& c, const PredictionTrace& t, const PredictionTrace& reference) {
  require_traces(t, reference);
  return lagged_ccc(apply_postproc(c, t).values, reference.values, c.lag);
}

std::string format_postproc_config(const PostprocConfig& c) {
  std::ostringstream os;
  os << "format_version=" << kConfigVersion << "\n";
  os << "median_window=" << c.median_window << "\n";
  os << "bias=" << format_double(c.bias) << "\n";
  os << "scale=" << format_double(c.scale) << "\n";
  os << "pivot=" << format_double(c.pivot) << "\n";
  os << "lag=" << c.lag << "\n";
  os << "frame_period=" << format_double(c.frame_period) << "\n";
  os << "median_window_s=" << format_double(static_cast<double>(c.median_window) * c.frame_period) << "\n";
  os << "lag_s=" << format_double(static_cast<double>(c.lag) * c.frame_period) << "\n";
  const auto join = [](const std::vector<std::size_t>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
  };
  os << "grid_windows=" << join(c.grid.windows) << "\n";
  os << "grid_lags=" << join(c.grid.lags) << "\n";
  return os.str();
}

PostprocConfig parse_postproc_config(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("postproc config: expected key=value, got '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  const auto get = [&](const std::string& key) -> const std::string& {
    const auto it = kv.find(key);
    if (it == kv.end()) throw FormatError("postproc config: missing key '" + key + "'");
    return it->second;
  };
  if (parse_u64(get("format_version")) != kConfigVersion)
    throw VersionError("postproc config: unsupported format_version " + get("format_version"));
  const auto split = [](const std::string& s) {
    std::vector<std::size_t> out;
    std::size_t start = 0;
    while (start < s.size()) {
      const auto comma = s.find(',', start);
      const auto end = comma == std::string::npos ? s.size() : comma;
      out.push_back(parse_u64(std::string_view(s).substr(start, end - start)));
      start = end + 1;
    }
    return out;
  };
  PostprocConfig c;
  c.median_window = parse_u64(get("median_window"));
  c.bias = parse_double(get("bias"));
  c.scale = parse_double(get("scale"));
  c.pivot = parse_double(get("pivot"));
  c.lag = parse_u64(get("lag"));
  c.frame_period = parse_double(get("frame_period"));
  if (kv.count("grid_windows")) c.grid.windows = split(kv["grid_windows"]);
  if (kv.count("grid_lags")) c.grid.lags = split(kv["grid_lags"]);
  c.validate();
  return c;
}

void save_postproc_config(const PostprocConfig& c, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << format_postproc_config(c);
  if (!out) throw IoError("failed writing " + path.string());
}

PostprocConfig load_postproc_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_postproc_config(ss.str());
}

namespace serial {

PredictionTrace median_filter(const PredictionTrace& t, std::size_t window) {
  require_window(window, t.values.size());
  PredictionTrace out{Vector(t.values.size()), t.frame_period};
  Vector buf;
  for (std::size_t i = 0; i < t.values.size(); ++i) out.values[i] = window_median(t.values, i, window / 2, buf);
  return out;
}

ChainResult chain_search(const PredictionTrace& t, const PredictionTrace& reference,
                         const PostprocGrid& grid) {
  require_traces(t, reference);
  const std::vector<std::size_t> windows = usable_windows(grid, t.values.size());
  std::vector<std::optional<Candidate>> candidates;
  for (std::size_t w : windows) candidates.push_back(evaluate_window(t, reference, grid, w, median_filter));
  return reduce(identity_candidate(t, reference, grid), candidates);
}

}  // namespace serial

}  // namespace cavf
