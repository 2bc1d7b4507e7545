#pragma once

// Central-difference verification of fusion_backward on seeded random
// instances. The error for a tensor is max |analytic - numeric| divided by
// the largest numeric entry of that tensor.

#include <cstdint>
#include <string>
#include <vector>

#include "cavf/fusion.hpp"

namespace cavf {

struct GradcheckOptions {
  std::vector<Variant> variants{Variant::cross_attention, Variant::self_attention, Variant::two_stage};
  std::size_t seeds = 10;
  std::uint64_t first_seed = 1;
  std::size_t feature_dim = 4;
  std::size_t length = 6;
  std::size_t hidden = 8;
  double step = 1e-5;
  double tolerance = 1e-5;
  // Negative control: corrupts the analytic attention-weight gradient.
  bool perturb_w = false;
};

struct GradcheckRow {
  Variant variant = Variant::cross_attention;
  std::string tensor;  // w0, w1, fc1_w, fc1_b, fc2_w, fc2_b, xa, xv
  double max_error = 0.0;  // worst over seeds
  bool passed = false;
};

struct GradcheckReport {
  std::vector<GradcheckRow> rows;
  std::size_t instances = 0;
  bool passed() const;
};

GradcheckReport gradient_check(const GradcheckOptions& options);

}  // namespace cavf
