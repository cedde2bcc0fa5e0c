#pragma once

#include <cstdint>
#include <string>

#include "subjectlab/tensor.hpp"

namespace subjectlab {

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// First/second moment accumulators shaped like the parameters they track.
struct OptimizerState {
  ParameterSet first_moment;
  ParameterSet second_moment;
  std::uint64_t step = 0;

  static OptimizerState for_parameters(const ParameterSet& params);
};

struct StepResult {
  bool applied = false;
  // Empty when applied; otherwise names the first non-finite gradient.
  std::string diagnostic;
};

// One Adam update (no weight decay). A gradient containing NaN or Inf leaves
// params and state untouched and reports which tensor was at fault.
StepResult optimizer_step(ParameterSet& params, const ParameterSet& grads,
                          OptimizerState& state, double learning_rate,
                          const AdamHyper& hyper = {});

}  // namespace subjectlab
