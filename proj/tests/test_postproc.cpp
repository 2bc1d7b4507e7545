#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>

#include "cavf/errors.hpp"
#include "cavf/metrics.hpp"
#include "cavf/postproc.hpp"

using namespace cavf;

namespace {

PredictionTrace trace(Vector v) { return {std::move(v), 0.04}; }

// Smooth reference built from a few slow sinusoids plus a seeded phase.
Vector smooth_signal(std::size_t n, Rng& rng) {
  const double phase = rng.uniform(0, 2 * std::numbers::pi);
  Vector v(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i);
    v[i] = std::sin(0.031 * t + phase) + 0.5 * std::sin(0.087 * t + 2 * phase) + 0.25 * std::cos(0.013 * t);
  }
  return v;
}

// delayed[n] = v[n - lag], edges replicated.
Vector delay(const Vector& v, std::size_t lag) {
  Vector out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i >= lag ? i - lag : 0];
  return out;
}

}  // namespace

TEST_CASE("median_filter examples") {
  CHECK(median_filter(trace({1, 5, 2, 8, 3}), 3).values == Vector{1, 2, 5, 3, 3});
  Rng rng(1);
  const Vector v = smooth_signal(50, rng);
  CHECK(median_filter(trace(v), 1).values == v);
  for (std::size_t w : {1, 3, 7, 49}) CHECK(median_filter(trace(Vector(50, 2.5)), w).values == Vector(50, 2.5));

  CHECK_THROWS_AS((void)median_filter(trace(v), 4), ConfigError);
  CHECK_THROWS_AS((void)median_filter(trace(v), 51), ConfigError);
  CHECK_THROWS_AS((void)median_filter(trace(v), 0), ConfigError);
}

TEST_CASE("median_filter outputs come from the input multiset and match the serial kernel") {
  Rng rng(2);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 5 + rng.below(3000);
    Vector v(n);
    for (double& x : v) x = rng.normal();
    std::size_t w = 1 + 2 * rng.below(std::min<std::size_t>(n / 2, 150));
    const PredictionTrace out = median_filter(trace(v), w);
    CHECK(out.values == serial::median_filter(trace(v), w).values);
    Vector sorted = v;
    std::sort(sorted.begin(), sorted.end());
    for (double x : out.values) CHECK(std::binary_search(sorted.begin(), sorted.end(), x));
  }
}

TEST_CASE("center examples") {
  CHECK(center(trace({0, 1, 2}), trace({10, 11, 12})).values == Vector{10, 11, 12});
  const PredictionTrace matched = trace({1, 2, 3});
  CHECK(center(matched, trace({3, 2, 1})).values == matched.values);
  Rng rng(3);
  const PredictionTrace t = trace(smooth_signal(40, rng));
  const PredictionTrace r = trace(smooth_signal(40, rng));
  const PredictionTrace once = center(t, r);
  CHECK(std::abs(mean(once.values) - mean(r.values)) < 1e-12);
  const PredictionTrace twice = center(once, r);
  for (std::size_t i = 0; i < 40; ++i) CHECK(std::abs(twice.values[i] - once.values[i]) < 1e-12);
  CHECK_THROWS_AS((void)center(trace({}), r), DegenerateError);
}

TEST_CASE("scale_match examples") {
  CHECK(scale_match(trace({0, 2, 4}), trace({0, 1, 2})).values == Vector{1, 2, 3});
  const PredictionTrace t = trace({1, 3, 5});
  CHECK(scale_match(t, trace({10, 12, 14})).values == t.values);
  Rng rng(4);
  const PredictionTrace a = trace(smooth_signal(64, rng));
  PredictionTrace b = trace(smooth_signal(64, rng));
  for (double& v : b.values) v *= 3.0;
  const PredictionTrace s = scale_match(a, b);
  CHECK(std::abs(mean(s.values) - mean(a.values)) < 1e-12);
  CHECK(std::abs(stddev(s.values) - stddev(b.values)) < 1e-12);
  CHECK_THROWS_AS((void)scale_match(trace({2, 2, 2}), b), DegenerateError);
}

TEST_CASE("center after scale_match after center equals scale_match after center") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const PredictionTrace t = trace(smooth_signal(80, rng));
    PredictionTrace r = trace(smooth_signal(80, rng));
    for (double& v : r.values) v = 2.0 * v + rng.uniform(-3, 3);
    const PredictionTrace lhs = center(scale_match(center(t, r), r), r);
    const PredictionTrace rhs = scale_match(center(t, r), r);
    for (std::size_t i = 0; i < 80; ++i) CHECK(std::abs(lhs.values[i] - rhs.values[i]) < 1e-12);
  }
}

TEST_CASE("best_lag examples") {
  Rng rng(6);
  const Vector v = smooth_signal(300, rng);
  const LagResult two = best_lag(trace(v), trace(delay(v, 2)), PostprocGrid::default_lags(5));
  CHECK(two.lag == 2);
  CHECK(std::abs(two.ccc - 1.0) < 1e-12);
  CHECK(best_lag(trace(v), trace(v), PostprocGrid::default_lags(5)).lag == 0);

  Vector noise(300);
  for (double& x : noise) x = rng.normal();
  CHECK(best_lag(trace(noise), trace(v), {0}).lag == 0);

  CHECK_THROWS_AS((void)best_lag(trace({1, 1, 1}), trace({1, 1, 1}), {0, 1}), DegenerateError);
}

TEST_CASE("best_lag recovers any delay in the grid") {
  Rng rng(7);
  const Vector v = smooth_signal(600, rng);
  for (std::size_t lag = 0; lag <= 40; lag += 3)
    CHECK(best_lag(trace(v), trace(delay(v, lag)), PostprocGrid::default_lags(40)).lag == lag);
}

TEST_CASE("chain_search on a clean trace keeps the identity") {
  Rng rng(8);
  const PredictionTrace t = trace(smooth_signal(400, rng));
  const ChainResult r = chain_search(t, t);
  CHECK(r.config.median_window == 1);
  CHECK(r.config.lag == 0);
  CHECK(r.ccc == 1.0);
}

TEST_CASE("chain_search inverts a known corruption") {
  Rng rng(9);
  const Vector ref = smooth_signal(1000, rng);
  // pred[n] = 0.5 * ref[n + 2] + 3: the annotation lags the prediction by two frames.
  Vector pred(1000);
  for (std::size_t i = 0; i < 1000; ++i) pred[i] = 0.5 * ref[std::min<std::size_t>(i + 2, 999)] + 3.0;
  const ChainResult r = chain_search(trace(pred), trace(ref));
  CHECK(r.config.lag == 2);
  CHECK(std::abs(r.config.scale - 2.0) < 0.05);
  CHECK(r.config.bias < -2.5);
  CHECK(r.ccc > 1.0 - 1e-9 - 1e-3);
  CHECK(r.ccc >= ccc(pred, ref).ccc);
}

TEST_CASE("chain_search never scores below the raw trace") {
  Rng rng(10);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t n = 20 + rng.below(300);
    Vector t(n), r(n);
    for (double& v : t) v = rng.normal();
    for (std::size_t i = 0; i < n; ++i) r[i] = (trial % 2 ? -1.0 : 0.3) * t[i] + rng.normal();
    PostprocGrid grid;
    grid.lags = PostprocGrid::default_lags(10);
    const ChainResult res = chain_search(trace(t), trace(r), grid);
    CHECK(res.ccc >= ccc(t, r).ccc);
    const ChainResult ref = serial::chain_search(trace(t), trace(r), grid);
    CHECK(res.ccc == ref.ccc);
    CHECK(res.processed.values == ref.processed.values);
    CHECK(format_postproc_config(res.config) == format_postproc_config(ref.config));
  }
}

TEST_CASE("frozen replay reproduces the tuned score and config survives a file round trip") {
  Rng rng(11);
  const Vector ref = smooth_signal(500, rng);
  Vector pred(500);
  for (std::size_t i = 0; i < 500; ++i)
    pred[i] = 0.7 * ref[std::min<std::size_t>(i + 4, 499)] - 1.0 + 0.2 * rng.normal();
  const ChainResult tuned = chain_search(trace(pred), trace(ref));
  CHECK(frozen_ccc(tuned.config, trace(pred), trace(ref)) == tuned.ccc);
  CHECK(apply_postproc(tuned.config, trace(pred)).values == tuned.processed.values);

  const auto path = std::filesystem::temp_directory_path() / "cavf_postproc_test.txt";
  save_postproc_config(tuned.config, path);
  const PostprocConfig loaded = load_postproc_config(path);
  CHECK(format_postproc_config(loaded) == format_postproc_config(tuned.config));
  CHECK(frozen_ccc(loaded, trace(pred), trace(ref)) == tuned.ccc);
  std::filesystem::remove(path);

  CHECK(frozen_ccc(PostprocConfig::identity(), trace(pred), trace(ref)) == ccc(pred, ref).ccc);
}

TEST_CASE("postproc config parsing errors") {
  CHECK_THROWS_AS((void)parse_postproc_config("format_version=2\n"), VersionError);
  CHECK_THROWS_AS((void)parse_postproc_config("format_version=1\nmedian_window=3\n"), FormatError);
  CHECK_THROWS_AS((void)parse_postproc_config("garbage\n"), FormatError);
  std::string even = format_postproc_config(PostprocConfig::identity());
  even.replace(even.find("median_window=1"), 15, "median_window=4");
  CHECK_THROWS_AS((void)parse_postproc_config(even), ConfigError);
}
