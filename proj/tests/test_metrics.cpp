#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "cavf/errors.hpp"
#include "cavf/metrics.hpp"
#include "oracles.hpp"

using namespace cavf;

namespace {

Vector random_vector(std::size_t n, Rng& rng, double scale = 1.0, double offset = 0.0) {
  Vector v(n);
  for (double& x : v) x = offset + scale * rng.normal();
  return v;
}

}  // namespace

TEST_CASE("ccc hand cases") {
  const Vector a{1, 2, 3};
  CHECK(ccc(a, a).ccc == 1.0);
  CHECK(std::abs(ccc(a, Vector{3, 2, 1}).ccc + 1.0) < 1e-12);
  CHECK(std::abs(ccc(a, Vector{2, 3, 4}).ccc - 4.0 / 7.0) < 1e-12);

  const CccStats s = ccc(a, Vector{3, 2, 1});
  CHECK(std::abs(s.cov_xy + 2.0 / 3.0) < 1e-15);
  CHECK(std::abs(s.var_x - 2.0 / 3.0) < 1e-15);
}

TEST_CASE("ccc degenerate inputs") {
  CHECK_THROWS_AS((void)ccc(Vector{1.0}, Vector{1.0}), DegenerateError);
  CHECK_THROWS_AS((void)ccc(Vector{1, 2}, Vector{1, 2, 3}), DegenerateError);
  CHECK_THROWS_AS((void)ccc(Vector{2, 2, 2}, Vector{2, 2, 2}), DegenerateError);
  // Constant but different means: denominator is the squared mean gap.
  CHECK(ccc(Vector{1, 1}, Vector{3, 3}).ccc == 0.0);
}

TEST_CASE("ccc agrees with the naive formula and stays in range") {
  Rng rng(77);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + rng.below(50);
    const Vector x = random_vector(n, rng, rng.uniform(0.1, 3.0), rng.uniform(-2, 2));
    const Vector y = random_vector(n, rng, rng.uniform(0.1, 3.0), rng.uniform(-2, 2));
    const double c = ccc(x, y).ccc;
    CHECK(std::abs(c - oracle::naive_ccc(x, y)) < 1e-12);
    CHECK(std::abs(c) <= 1.0);
    CHECK(ccc(y, x).ccc == c);
    const double loss = ccc_loss(x, y);
    CHECK(loss >= 0.0);
    CHECK(loss <= 2.0);
  }
}

TEST_CASE("ccc is invariant under a shared positive affine map") {
  Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    const Vector x = random_vector(20, rng);
    const Vector y = random_vector(20, rng);
    const double a = rng.uniform(0.2, 5.0), b = rng.uniform(-10, 10);
    Vector x2 = x, y2 = y;
    for (double& v : x2) v = a * v + b;
    for (double& v : y2) v = a * v + b;
    CHECK(std::abs(ccc(x2, y2).ccc - ccc(x, y).ccc) < 1e-12);
  }
}

TEST_CASE("shifting means apart lowers a positive ccc") {
  Rng rng(19);
  int checked = 0;
  while (checked < 200) {
    const Vector y = random_vector(16, rng);
    Vector x = y;
    for (double& v : x) v += 0.5 * rng.normal();
    const CccStats base = ccc(x, y);
    if (base.ccc <= 0.0) continue;
    const double gap = base.mean_x - base.mean_y;
    const double c = (gap >= 0 ? 1.0 : -1.0) * rng.uniform(0.01, 3.0);
    Vector shifted = x;
    for (double& v : shifted) v += c;
    CHECK(ccc(shifted, y).ccc < base.ccc);
    ++checked;
  }
}

TEST_CASE("ccc_loss examples") {
  const Vector a{1, 2, 3};
  CHECK(ccc_loss(a, a) == 0.0);
  CHECK(std::abs(ccc_loss(a, Vector{3, 2, 1}) - 2.0) < 1e-12);
}

TEST_CASE("ccc_loss_grad matches central differences") {
  Rng rng(123);
  for (int trial = 0; trial < 20; ++trial) {
    Vector x = random_vector(8, rng, 1.0, rng.uniform(-1, 1));
    const Vector y = random_vector(8, rng);
    const Vector g = ccc_loss_grad(x, y);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double fd = oracle::central_difference([&] { return 1.0 - oracle::naive_ccc(x, y); }, x[i], 1e-6);
      CHECK(std::abs(g[i] - fd) <= 1e-6 * std::max(std::abs(fd), 1e-3));
    }
  }
}

TEST_CASE("ccc_loss_grad vanishes at the minimiser") {
  Rng rng(4);
  const Vector x = random_vector(12, rng);
  const Vector g = ccc_loss_grad(x, x);
  double norm = 0.0, along_shift = 0.0;
  for (double v : g) {
    norm += v * v;
    along_shift += v;
  }
  CHECK(std::sqrt(norm) < 1e-12);
  CHECK(std::abs(along_shift) < 1e-12);

  // Away from x == y with unequal means, a uniform shift changes the loss.
  Vector y = x;
  for (double& v : y) v += 1.0;
  double shift_grad = 0.0;
  for (double v : ccc_loss_grad(x, y)) shift_grad += v;
  CHECK(std::abs(shift_grad) > 1e-3);
}

TEST_CASE("pearson and stddev") {
  CHECK(std::abs(pearson(Vector{1, 2, 3}, Vector{2, 4, 6}) - 1.0) < 1e-15);
  CHECK(std::abs(stddev(Vector{0, 2, 4}) - std::sqrt(8.0 / 3.0)) < 1e-15);
  CHECK_THROWS_AS((void)mean(Vector{}), DegenerateError);
}
