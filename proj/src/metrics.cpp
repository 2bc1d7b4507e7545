#include "cavf/metrics.hpp"

#include <cmath>
#include <string>

#include "cavf/errors.hpp"

namespace cavf {

namespace {

void require_pair(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size())
    throw DegenerateError("ccc: length mismatch " + std::to_string(x.size()) + " vs " +
                          std::to_string(y.size()));
  if (x.size() < 2) throw DegenerateError("ccc: need at least 2 samples, got " + std::to_string(x.size()));
}

double denominator(const CccStats& s) {
  const double gap = s.mean_x - s.mean_y;
  return s.var_x + s.var_y + gap * gap;
}

}  // namespace

double mean(std::span<const double> x) {
  if (x.empty()) throw DegenerateError("mean of empty sequence");
  double total = 0.0;
  for (double v : x) total += v;
  return total / static_cast<double>(x.size());
}

double stddev(std::span<const double> x) {
  const double mu = mean(x);
  double acc = 0.0;
  for (double v : x) acc += (v - mu) * (v - mu);
  return std::sqrt(acc / static_cast<double>(x.size()));
}

CccStats ccc(std::span<const double> x, std::span<const double> y) {
  require_pair(x, y);
  const double n = static_cast<double>(x.size());
  CccStats s;
  s.mean_x = mean(x);
  s.mean_y = mean(y);
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - s.mean_x;
    const double dy = y[i] - s.mean_y;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  s.var_x = sxx / n;
  s.var_y = syy / n;
  s.cov_xy = sxy / n;
  const double den = denominator(s);
  if (!(den > 0.0)) throw DegenerateError("ccc: zero denominator (constant, identical inputs)");
  s.ccc = 2.0 * s.cov_xy / den;
  return s;
}

double ccc_loss(std::span<const double> x, std::span<const double> y) { return 1.0 - ccc(x, y).ccc; }

Vector ccc_loss_grad(std::span<const double> x, std::span<const double> y) {
  const CccStats s = ccc(x, y);
  const double n = static_cast<double>(x.size());
  const double num = 2.0 * s.cov_xy;
  const double den = denominator(s);
  const double gap = s.mean_x - s.mean_y;
  Vector grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d_num = 2.0 * (y[i] - s.mean_y) / n;
    const double d_den = 2.0 * ((x[i] - s.mean_x) + gap) / n;
    grad[i] = -(d_num * den - num * d_den) / (den * den);
  }
  return grad;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  const CccStats s = ccc(x, y);
  const double scale = std::sqrt(s.var_x * s.var_y);
  if (!(scale > 0.0)) throw DegenerateError("pearson: zero variance");
  return s.cov_xy / scale;
}

}  // namespace cavf
