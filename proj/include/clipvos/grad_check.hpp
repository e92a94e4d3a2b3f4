#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "clipvos/tensor.hpp"

namespace clipvos {

struct GradCheckOptions {
  double eps = 1e-5;
  double tol = 1e-4;
  // Relative error is |analytic - numeric| / max(|analytic|, |numeric|, denom_floor).
  double denom_floor = 1e-6;
  // 0 checks every entry; otherwise a seeded sample of this many per input.
  std::size_t max_entries_per_input = 0;
  std::uint64_t seed = 7;
  // Networks with relu: a failing entry whose stencil straddles a kink is
  // skipped. It counts as a kink when the analytic value agrees with one of
  // the one-sided differences within kink_ratio * tol (relative). A check
  // with more than max_skip_fraction skipped entries fails.
  bool skip_kinks = false;
  double kink_ratio = 10;
  double max_skip_fraction = 0.1;
};

struct GradCheckReport {
  double max_rel_error = 0;
  double max_abs_error = 0;
  std::size_t entries_checked = 0;
  std::size_t entries_skipped = 0;
  double tol = 0;
  bool passed = false;
  std::string worst;  // "input i, entry j: analytic a vs numeric n"
};

using ScalarFn = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

// Compares reverse-mode gradients of `f` at `inputs` against central finite
// differences. Inputs are perturbed in place and restored, so they may alias
// parameters that `f` also reaches through a closure.
GradCheckReport grad_check(const ScalarFn& f, std::vector<Tensor<double>> inputs,
                           const GradCheckOptions& options = {});

}  // namespace clipvos
