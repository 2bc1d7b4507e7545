#pragma once

#include <span>

#include "cavf/linalg.hpp"

namespace cavf {

/// Population (1/n) statistics behind the concordance correlation coefficient.
struct CccStats {
  double mean_x = 0.0;
  double mean_y = 0.0;
  double var_x = 0.0;
  double var_y = 0.0;
  double cov_xy = 0.0;
  double ccc = 0.0;
};

// ccc = 2 cov_xy / (var_x + var_y + (mean_x - mean_y)^2).
// Throws DegenerateError for n < 2, unequal lengths, or a zero denominator.
CccStats ccc(std::span<const double> x, std::span<const double> y);

// 1 - ccc, in [0, 2].
double ccc_loss(std::span<const double> x, std::span<const double> y);

// d(1 - ccc)/dx_i with y held fixed.
Vector ccc_loss_grad(std::span<const double> x, std::span<const double> y);

double pearson(std::span<const double> x, std::span<const double> y);

double mean(std::span<const double> x);
// Population standard deviation.
double stddev(std::span<const double> x);

}  // namespace cavf
