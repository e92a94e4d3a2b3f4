#pragma once

#include <string>
#include <vector>

#include "clipvos/grad_check.hpp"

namespace clipvos {

struct NamedGradReport {
  std::string name;
  GradCheckReport report;
};

// Finite-difference checks of every differentiable core op at float64. Each
// op output is reduced to a scalar by a fixed random weighting.
std::vector<NamedGradReport> check_core_op_gradients(const GradCheckOptions& options = {});

// Model-level checks: one intra-clip refinement layer stack, the decoder, and
// the full training loss on an 8x8, two-frame, single-object instance.
std::vector<NamedGradReport> check_model_gradients(const GradCheckOptions& options = {});

}  // namespace clipvos
