#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "subjectlab/tensor.hpp"

namespace subjectlab {

// Handle to a value recorded on a Tape.
struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
};

// Reverse-mode tape over batched 2-D tensors ([rows, features]). Values are
// computed eagerly; when gradients are enabled each op also records how to
// push its output gradient back to its inputs.
class Tape {
 public:
  explicit Tape(bool record_gradients = true) : record_(record_gradients) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const noexcept { return record_; }

  Var constant(Tensor value);
  // A leaf whose gradient is tracked (used for input gradients).
  Var input(Tensor value);
  // A leaf bound to params[index]. The tensor is borrowed, not copied, and
  // must outlive the tape. Repeated calls return the same Var.
  Var parameter(const ParameterSet& params, std::size_t index);
  Var parameter(const ParameterSet& params, std::string_view name) {
    return parameter(params, params.index_of(name));
  }

  const Tensor& value(Var v) const;
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  // Gradient of v after backward(); zeros if nothing flowed into it.
  Tensor grad(Var v) const;

  // Seeds d(objective)/d(out) = upstream and propagates to every leaf.
  void backward(Var out, const Tensor& upstream);
  void backward(std::span<const Var> outs, std::span<const Tensor> upstream);
  // Gradients for every tensor of `params` (zeros where unused).
  ParameterSet parameter_grads(const ParameterSet& params) const;

  // Op-author interface.
  using Backward = std::function<void(Tape&, const Tensor& out_grad)>;
  Var record(Tensor value, std::span<const Var> parents, Backward fn);
  Var record(Tensor value, std::initializer_list<Var> parents, Backward fn) {
    return record(std::move(value), std::span<const Var>(parents.begin(), parents.size()),
                  std::move(fn));
  }
  void accumulate(Var v, const Tensor& g);
  void accumulate(Var v, std::span<const float> g, const Shape& shape);

 private:
  struct Node {
    Tensor owned;
    const Tensor* borrowed = nullptr;
    Tensor grad;
    bool requires_grad = false;
    Backward backward;
  };
  bool record_;
  std::vector<Node> nodes_;
  std::map<std::pair<const ParameterSet*, std::size_t>, std::size_t> param_nodes_;
};

namespace ops {

// x:[B,I] * w:[I,O] + b:[O]
Var linear(Tape& tape, Var x, Var w, Var b);
Var add(Tape& tape, Var a, Var b);
Var mul(Tape& tape, Var a, Var b);
Var scale(Tape& tape, Var x, float s);
// Per-row scale: x:[B,F] times s:[B,1]. Only x receives a gradient.
Var scale_rows(Tape& tape, Var x, const std::vector<float>& s);
Var silu(Tape& tape, Var x);
Var tanh(Tape& tape, Var x);
// Row-wise normalization with learned gain/bias of shape [F].
Var layer_norm(Tape& tape, Var x, Var gain, Var bias, float eps = 1e-5f);
// Concatenate along the feature axis; all inputs share the row count.
Var concat(Tape& tape, std::span<const Var> parts);
// Rows of table:[V,D] selected by ids (stored as floats in ids:[N] or [B,L]).
Var embedding(Tape& tape, Var table, const Tensor& ids);
// x:[B*L,D] grouped into B blocks of L rows; mean over rows where
// mask[b*L+l] is set. Blocks with no set rows yield zeros.
Var masked_mean(Tape& tape, Var x, std::size_t group, const std::vector<bool>& mask);
// Repeats a single row [1,F] into [B,F].
Var broadcast_rows(Tape& tape, Var row, std::size_t rows);

}  // namespace ops

// Declared input of a network: rows are the batch, `width` the features.
struct InputSpec {
  std::string name;
  std::size_t width = 0;
};

// A network description. Parameters are supplied separately so the same
// description evaluates any compatible ParameterSet.
class Network {
 public:
  virtual ~Network() = default;
  virtual std::vector<InputSpec> input_specs() const = 0;
  virtual std::vector<Var> forward(Tape& tape, const ParameterSet& params,
                                   std::span<const Var> inputs) const = 0;
};

// Throws ShapeError naming the first input that disagrees with the specs.
void validate_inputs(const Network& net, std::span<const Tensor> inputs);

std::vector<Tensor> evaluate(const Network& net, const ParameterSet& params,
                             std::span<const Tensor> inputs);

struct Evaluation {
  std::vector<Tensor> outputs;
  ParameterSet param_grads;
  std::vector<Tensor> input_grads;
};

// Outputs plus exact reverse-mode derivatives of sum_i <upstream_i, output_i>.
Evaluation evaluate_with_gradients(const Network& net, const ParameterSet& params,
                                   std::span<const Tensor> inputs,
                                   std::span<const Tensor> upstream);

struct FiniteDifference {
  ParameterSet grads;
  // Names of parameters whose perturbed objective was not finite.
  std::vector<std::string> non_finite;
};

// Central differences of the same objective, accumulated in double.
FiniteDifference finite_difference_grad(const Network& net, const ParameterSet& params,
                                        std::span<const Tensor> inputs,
                                        std::span<const Tensor> upstream,
                                        float perturbation);

// max over tensors of ||a - b|| / max(||a||, ||b||, floor).
double max_relative_error(const ParameterSet& a, const ParameterSet& b,
                          double floor = 1e-6);
// Same ratio over all tensors taken as one vector.
double relative_error(const ParameterSet& a, const ParameterSet& b, double floor = 1e-6);

}  // namespace subjectlab
