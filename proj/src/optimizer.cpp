#include "subjectlab/optimizer.hpp"

#include <cmath>

#include "subjectlab/error.hpp"

namespace subjectlab {

OptimizerState OptimizerState::for_parameters(const ParameterSet& params) {
  return OptimizerState{params.zeros_like(), params.zeros_like(), 0};
}

StepResult optimizer_step(ParameterSet& params, const ParameterSet& grads,
                          OptimizerState& state, double learning_rate,
                          const AdamHyper& hyper) {
  if (!(learning_rate > 0.0)) throw ValueError("learning rate must be positive");
  if (!params.same_layout(grads))
    throw ShapeError("grads", "gradient layout does not match parameters");
  if (!params.same_layout(state.first_moment) || !params.same_layout(state.second_moment))
    throw ShapeError("optimizer_state", "accumulator layout does not match parameters");
  for (std::size_t p = 0; p < grads.size(); ++p)
    if (!grads[p].all_finite())
      return {false, "non-finite gradient in '" + grads.name(p) + "'"};

  ++state.step;
  const double t = static_cast<double>(state.step);
  const float b1 = static_cast<float>(hyper.beta1);
  const float b2 = static_cast<float>(hyper.beta2);
  const float c1 = static_cast<float>(1.0 - hyper.beta1);
  const float c2 = static_cast<float>(1.0 - hyper.beta2);
  const float bias1 = static_cast<float>(1.0 / (1.0 - std::pow(hyper.beta1, t)));
  const float bias2 = static_cast<float>(1.0 / (1.0 - std::pow(hyper.beta2, t)));
  const float lr = static_cast<float>(learning_rate);
  const float eps = static_cast<float>(hyper.eps);
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& w = params[p];
    auto& m = state.first_moment[p];
    auto& v = state.second_moment[p];
    const auto& g = grads[p];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + c1 * g[i];
      v[i] = b2 * v[i] + c2 * g[i] * g[i];
      const float mhat = m[i] * bias1;
      const float vhat = v[i] * bias2;
      w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
  return {true, {}};
}

}  // namespace subjectlab
