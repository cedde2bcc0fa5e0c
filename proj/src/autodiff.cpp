#include "subjectlab/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "subjectlab/error.hpp"

namespace subjectlab {

Var Tape::constant(Tensor value) {
  Node n;
  n.owned = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var Tape::input(Tensor value) {
  Node n;
  n.owned = std::move(value);
  n.requires_grad = record_;
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var Tape::parameter(const ParameterSet& params, std::size_t index) {
  const auto key = std::make_pair(&params, index);
  if (auto it = param_nodes_.find(key); it != param_nodes_.end())
    return Var{it->second};
  Node n;
  n.borrowed = &params[index];
  n.requires_grad = record_;
  nodes_.push_back(std::move(n));
  param_nodes_.emplace(key, nodes_.size() - 1);
  return Var{nodes_.size() - 1};
}

const Tensor& Tape::value(Var v) const {
  const auto& n = nodes_.at(v.id);
  return n.borrowed ? *n.borrowed : n.owned;
}

Tensor Tape::grad(Var v) const {
  const auto& n = nodes_.at(v.id);
  if (!n.grad.empty()) return n.grad;
  return Tensor(value(v).shape());
}

Var Tape::record(Tensor value, std::span<const Var> parents, Backward fn) {
  Node n;
  n.owned = std::move(value);
  if (record_) {
    for (auto p : parents)
      if (nodes_.at(p.id).requires_grad) n.requires_grad = true;
    if (n.requires_grad) n.backward = std::move(fn);
  }
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

void Tape::accumulate(Var v, const Tensor& g) { accumulate(v, g.data(), g.shape()); }

void Tape::accumulate(Var v, std::span<const float> g, const Shape& shape) {
  auto& n = nodes_.at(v.id);
  if (!n.requires_grad) return;
  if (n.grad.empty()) {
    n.grad = Tensor(shape, std::vector<float>(g.begin(), g.end()));
    return;
  }
  for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
}

void Tape::backward(Var out, const Tensor& upstream) {
  const Var outs[] = {out};
  backward(outs, std::span<const Tensor>(&upstream, 1));
}

void Tape::backward(std::span<const Var> outs, std::span<const Tensor> upstream) {
  if (!record_) throw Error("backward() on a tape that records no gradients");
  if (outs.size() != upstream.size())
    throw ShapeError("upstream", "expected " + std::to_string(outs.size()) + " tensors");
  std::size_t last = 0;
  for (std::size_t k = 0; k < outs.size(); ++k) {
    if (upstream[k].shape() != value(outs[k]).shape())
      throw ShapeError("upstream", "expected " + shape_string(value(outs[k]).shape()) +
                                       ", got " + shape_string(upstream[k].shape()));
    accumulate(outs[k], upstream[k]);
    last = std::max(last, outs[k].id);
  }
  for (std::size_t i = last + 1; i-- > 0;) {
    if (!nodes_[i].backward || nodes_[i].grad.empty()) continue;
    // Moved out so the callback can freely accumulate into other nodes.
    const Tensor g = std::move(nodes_[i].grad);
    auto fn = std::move(nodes_[i].backward);
    fn(*this, g);
    nodes_[i].grad = g;
  }
}

ParameterSet Tape::parameter_grads(const ParameterSet& params) const {
  ParameterSet grads = params.zeros_like();
  for (const auto& [key, node] : param_nodes_) {
    if (key.first != &params) continue;
    const auto& g = nodes_[node].grad;
    if (!g.empty()) grads[key.second] = g;
  }
  return grads;
}

namespace ops {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(op, "shape mismatch " + shape_string(a.shape()) + " vs " +
                             shape_string(b.shape()));
}

}  // namespace

Var linear(Tape& tape, Var x, Var w, Var b) {
  const Tensor& xv = tape.value(x);
  const Tensor& wv = tape.value(w);
  const Tensor& bv = tape.value(b);
  if (wv.rank() != 2 || xv.cols() != wv.dim(0))
    throw ShapeError("linear", "input " + shape_string(xv.shape()) +
                                   " incompatible with weight " + shape_string(wv.shape()));
  if (bv.size() != wv.dim(1))
    throw ShapeError("linear", "bias " + shape_string(bv.shape()) +
                                   " incompatible with weight " + shape_string(wv.shape()));
  const std::size_t rows = xv.rows(), in = wv.dim(0), out = wv.dim(1);
  Tensor y({rows, out});
  matmul(xv.raw(), wv.raw(), y.raw(), rows, in, out);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < out; ++j) y[r * out + j] += bv[j];
  return tape.record(std::move(y), {x, w, b}, [x, w, b](Tape& t, const Tensor& gy) {
    const Tensor& xv = t.value(x);
    const Tensor& wv = t.value(w);
    const std::size_t rows = xv.rows(), in = wv.dim(0), out = wv.dim(1);
    if (t.requires_grad(x)) {
      const Tensor wt = transpose(wv);
      Tensor gx({rows, in});
      matmul(gy.raw(), wt.raw(), gx.raw(), rows, out, in);
      t.accumulate(x, gx.data(), xv.shape());
    }
    if (t.requires_grad(w)) {
      const Tensor xt = transpose(xv.reshaped({rows, in}));
      Tensor gw({in, out});
      matmul(xt.raw(), gy.raw(), gw.raw(), in, rows, out);
      t.accumulate(w, gw);
    }
    if (t.requires_grad(b)) {
      std::vector<float> gb(out, 0.0f);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < out; ++j) gb[j] += gy[r * out + j];
      t.accumulate(b, gb, t.value(b).shape());
    }
  });
}

Var add(Tape& tape, Var a, Var b) {
  const Tensor& bv = tape.value(b);
  Tensor y = tape.value(a);
  require_same_shape(y, bv, "add");
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
  return tape.record(std::move(y), {a, b}, [a, b](Tape& t, const Tensor& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var mul(Tape& tape, Var a, Var b) {
  const Tensor& bv = tape.value(b);
  Tensor y = tape.value(a);
  require_same_shape(y, bv, "mul");
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= bv[i];
  return tape.record(std::move(y), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (t.requires_grad(a)) {
      Tensor ga = g;
      const Tensor& bv = t.value(b);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= bv[i];
      t.accumulate(a, ga);
    }
    if (t.requires_grad(b)) {
      Tensor gb = g;
      const Tensor& av = t.value(a);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] *= av[i];
      t.accumulate(b, gb);
    }
  });
}

Var scale(Tape& tape, Var x, float s) {
  Tensor y = tape.value(x);
  for (auto& v : y.data()) v *= s;
  return tape.record(std::move(y), {x}, [x, s](Tape& t, const Tensor& g) {
    Tensor gx = g;
    for (auto& v : gx.data()) v *= s;
    t.accumulate(x, gx);
  });
}

Var scale_rows(Tape& tape, Var x, const std::vector<float>& s) {
  Tensor y = tape.value(x);
  if (s.size() != y.rows())
    throw ShapeError("scale_rows", "expected " + std::to_string(y.rows()) +
                                       " row scales, got " + std::to_string(s.size()));
  const auto cols = y.cols();
  for (std::size_t r = 0; r < y.rows(); ++r)
    for (std::size_t j = 0; j < cols; ++j) y[r * cols + j] *= s[r];
  return tape.record(std::move(y), {x}, [x, s](Tape& t, const Tensor& g) {
    Tensor gx = g;
    const auto cols = gx.cols();
    for (std::size_t r = 0; r < gx.rows(); ++r)
      for (std::size_t j = 0; j < cols; ++j) gx[r * cols + j] *= s[r];
    t.accumulate(x, gx);
  });
}

Var silu(Tape& tape, Var x) {
  Tensor y = tape.value(x);
  for (auto& v : y.data()) v = v / (1.0f + std::exp(-v));
  return tape.record(std::move(y), {x}, [x](Tape& t, const Tensor& g) {
    const Tensor& xv = t.value(x);
    Tensor gx = g;
    for (std::size_t i = 0; i < gx.size(); ++i) {
      const float sig = 1.0f / (1.0f + std::exp(-xv[i]));
      gx[i] *= sig * (1.0f + xv[i] * (1.0f - sig));
    }
    t.accumulate(x, gx);
  });
}

Var tanh(Tape& tape, Var x) {
  Tensor y = tape.value(x);
  for (auto& v : y.data()) v = std::tanh(v);
  Tensor saved = tape.recording() ? y : Tensor();
  return tape.record(std::move(y), {x}, [x, saved = std::move(saved)](Tape& t, const Tensor& g) {
    Tensor gx = g;
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] *= 1.0f - saved[i] * saved[i];
    t.accumulate(x, gx);
  });
}

Var layer_norm(Tape& tape, Var x, Var gain, Var bias, float eps) {
  const Tensor& xv = tape.value(x);
  const Tensor& gv = tape.value(gain);
  const Tensor& bv = tape.value(bias);
  const std::size_t rows = xv.rows(), cols = xv.cols();
  if (gv.size() != cols || bv.size() != cols)
    throw ShapeError("layer_norm", "gain/bias width must be " + std::to_string(cols));
  Tensor normed({rows, cols});
  std::vector<float> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const float* in = xv.raw() + r * cols;
    double mean = 0.0;
    for (std::size_t j = 0; j < cols; ++j) mean += in[j];
    mean /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      const double d = in[j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(cols);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = static_cast<float>(is);
    for (std::size_t j = 0; j < cols; ++j)
      normed[r * cols + j] = static_cast<float>((in[j] - mean) * is);
  }
  Tensor y({rows, cols});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < cols; ++j)
      y[r * cols + j] = normed[r * cols + j] * gv[j] + bv[j];
  return tape.record(
      std::move(y), {x, gain, bias},
      [x, gain, bias, normed = std::move(normed), inv_std = std::move(inv_std)](
          Tape& t, const Tensor& g) {
        const std::size_t rows = normed.rows(), cols = normed.cols();
        const Tensor& gv = t.value(gain);
        if (t.requires_grad(gain) || t.requires_grad(bias)) {
          std::vector<float> gg(cols, 0.0f), gb(cols, 0.0f);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < cols; ++j) {
              gg[j] += g[r * cols + j] * normed[r * cols + j];
              gb[j] += g[r * cols + j];
            }
          t.accumulate(gain, gg, t.value(gain).shape());
          t.accumulate(bias, gb, t.value(bias).shape());
        }
        if (t.requires_grad(x)) {
          Tensor gx({rows, cols});
          const double n = static_cast<double>(cols);
          for (std::size_t r = 0; r < rows; ++r) {
            double sum_g = 0.0, sum_gn = 0.0;
            for (std::size_t j = 0; j < cols; ++j) {
              const double gh = static_cast<double>(g[r * cols + j]) * gv[j];
              sum_g += gh;
              sum_gn += gh * normed[r * cols + j];
            }
            for (std::size_t j = 0; j < cols; ++j) {
              const double gh = static_cast<double>(g[r * cols + j]) * gv[j];
              gx[r * cols + j] = static_cast<float>(
                  inv_std[r] * (gh - sum_g / n - normed[r * cols + j] * sum_gn / n));
            }
          }
          t.accumulate(x, gx.data(), t.value(x).shape());
        }
      });
}

Var concat(Tape& tape, std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat", "no inputs");
  const std::size_t rows = tape.value(parts[0]).rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (auto p : parts) {
    const Tensor& v = tape.value(p);
    if (v.rows() != rows)
      throw ShapeError("concat", "row count " + std::to_string(v.rows()) +
                                     " differs from " + std::to_string(rows));
    widths.push_back(v.cols());
    total += v.cols();
  }
  Tensor y({rows, total});
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& v = tape.value(parts[k]);
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(v.raw() + r * widths[k], widths[k], y.raw() + r * total + offset);
    offset += widths[k];
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return tape.record(std::move(y), parts, [ps, widths, rows, total](Tape& t, const Tensor& g) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < ps.size(); ++k) {
      if (t.requires_grad(ps[k])) {
        std::vector<float> gk(rows * widths[k]);
        for (std::size_t r = 0; r < rows; ++r)
          std::copy_n(g.raw() + r * total + offset, widths[k], gk.data() + r * widths[k]);
        t.accumulate(ps[k], gk, t.value(ps[k]).shape());
      }
      offset += widths[k];
    }
  });
}

Var embedding(Tape& tape, Var table, const Tensor& ids) {
  const Tensor& tv = tape.value(table);
  const std::size_t vocab = tv.rows(), dim = tv.cols();
  std::vector<std::size_t> rows(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const float f = ids[i];
    if (!(f >= 0.0f) || f >= static_cast<float>(vocab) || f != std::floor(f))
      throw ShapeError("ids", "token id " + std::to_string(f) + " outside table of " +
                                  std::to_string(vocab) + " rows");
    rows[i] = static_cast<std::size_t>(f);
  }
  Tensor y({ids.size(), dim});
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(tv.raw() + rows[i] * dim, dim, y.raw() + i * dim);
  return tape.record(std::move(y), {table}, [table, rows = std::move(rows), dim](Tape& t, const Tensor& g) {
    Tensor gt(t.value(table).shape());
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t j = 0; j < dim; ++j) gt[rows[i] * dim + j] += g[i * dim + j];
    t.accumulate(table, gt);
  });
}

Var masked_mean(Tape& tape, Var x, std::size_t group, const std::vector<bool>& mask) {
  const Tensor& xv = tape.value(x);
  const std::size_t total = xv.rows(), dim = xv.cols();
  if (group == 0 || total % group != 0 || mask.size() != total)
    throw ShapeError("masked_mean", "rows " + std::to_string(total) +
                                        " not divisible into groups of " + std::to_string(group));
  const std::size_t blocks = total / group;
  std::vector<float> inv_count(blocks, 0.0f);
  for (std::size_t b = 0; b < blocks; ++b) {
    std::size_t n = 0;
    for (std::size_t l = 0; l < group; ++l) n += mask[b * group + l] ? 1 : 0;
    inv_count[b] = n ? 1.0f / static_cast<float>(n) : 0.0f;
  }
  Tensor y({blocks, dim});
  for (std::size_t b = 0; b < blocks; ++b) {
    for (std::size_t l = 0; l < group; ++l) {
      if (!mask[b * group + l]) continue;
      const float* in = xv.raw() + (b * group + l) * dim;
      for (std::size_t j = 0; j < dim; ++j) y[b * dim + j] += in[j];
    }
    for (std::size_t j = 0; j < dim; ++j) y[b * dim + j] *= inv_count[b];
  }
  return tape.record(std::move(y), {x}, [x, group, mask, inv_count, dim](Tape& t, const Tensor& g) {
    Tensor gx(t.value(x).shape());
    const std::size_t blocks = inv_count.size();
    for (std::size_t b = 0; b < blocks; ++b)
      for (std::size_t l = 0; l < group; ++l) {
        if (!mask[b * group + l]) continue;
        for (std::size_t j = 0; j < dim; ++j)
          gx[(b * group + l) * dim + j] = g[b * dim + j] * inv_count[b];
      }
    t.accumulate(x, gx);
  });
}

Var broadcast_rows(Tape& tape, Var row, std::size_t rows) {
  const Tensor& rv = tape.value(row);
  if (rv.rows() != 1) throw ShapeError("broadcast_rows", "expected a single row");
  const std::size_t dim = rv.cols();
  Tensor y({rows, dim});
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(rv.raw(), dim, y.raw() + r * dim);
  return tape.record(std::move(y), {row}, [row, rows, dim](Tape& t, const Tensor& g) {
    std::vector<float> gr(dim, 0.0f);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < dim; ++j) gr[j] += g[r * dim + j];
    t.accumulate(row, gr, t.value(row).shape());
  });
}

}  // namespace ops

void validate_inputs(const Network& net, std::span<const Tensor> inputs) {
  const auto specs = net.input_specs();
  if (specs.size() != inputs.size())
    throw ShapeError("inputs", "network expects " + std::to_string(specs.size()) +
                                   " inputs, got " + std::to_string(inputs.size()));
  std::size_t rows = 0;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const Tensor& t = inputs[i];
    if (t.empty() || t.rank() != 2 || t.cols() != specs[i].width)
      throw ShapeError(specs[i].name, "expected [rows," + std::to_string(specs[i].width) +
                                          "], got " + shape_string(t.shape()));
    if (i == 0) rows = t.rows();
    if (t.rows() != rows)
      throw ShapeError(specs[i].name, "expected " + std::to_string(rows) + " rows, got " +
                                          std::to_string(t.rows()));
  }
}

std::vector<Tensor> evaluate(const Network& net, const ParameterSet& params,
                             std::span<const Tensor> inputs) {
  validate_inputs(net, inputs);
  Tape tape(false);
  std::vector<Var> in;
  for (const auto& t : inputs) in.push_back(tape.constant(t));
  std::vector<Tensor> out;
  for (auto v : net.forward(tape, params, in)) out.push_back(tape.value(v));
  return out;
}

Evaluation evaluate_with_gradients(const Network& net, const ParameterSet& params,
                                   std::span<const Tensor> inputs,
                                   std::span<const Tensor> upstream) {
  validate_inputs(net, inputs);
  Tape tape(true);
  std::vector<Var> in;
  for (const auto& t : inputs) in.push_back(tape.input(t));
  const auto outs = net.forward(tape, params, in);
  tape.backward(outs, upstream);
  Evaluation ev;
  for (auto v : outs) ev.outputs.push_back(tape.value(v));
  ev.param_grads = tape.parameter_grads(params);
  for (auto v : in) ev.input_grads.push_back(tape.grad(v));
  return ev;
}

namespace {

double objective(const Network& net, const ParameterSet& params,
                 std::span<const Tensor> inputs, std::span<const Tensor> upstream) {
  const auto outs = evaluate(net, params, inputs);
  double s = 0.0;
  for (std::size_t k = 0; k < outs.size(); ++k)
    for (std::size_t i = 0; i < outs[k].size(); ++i)
      s += static_cast<double>(outs[k][i]) * upstream[k][i];
  return s;
}

}  // namespace

FiniteDifference finite_difference_grad(const Network& net, const ParameterSet& params,
                                        std::span<const Tensor> inputs,
                                        std::span<const Tensor> upstream,
                                        float perturbation) {
  if (!(perturbation >= 1e-5f && perturbation <= 1e-2f))
    throw ValueError("perturbation must lie in [1e-5, 1e-2]");
  FiniteDifference fd;
  fd.grads = params.zeros_like();
  ParameterSet work = params;
  for (std::size_t p = 0; p < work.size(); ++p) {
    bool finite = true;
    for (std::size_t i = 0; i < work[p].size(); ++i) {
      const float orig = work[p][i];
      // Use the actually representable step so rounding of orig +/- h does
      // not bias the quotient.
      const float up = orig + perturbation;
      const float down = orig - perturbation;
      work[p][i] = up;
      const double fp = objective(net, work, inputs, upstream);
      work[p][i] = down;
      const double fm = objective(net, work, inputs, upstream);
      work[p][i] = orig;
      if (!std::isfinite(fp) || !std::isfinite(fm)) {
        finite = false;
        continue;
      }
      fd.grads[p][i] = static_cast<float>((fp - fm) / (static_cast<double>(up) - down));
    }
    if (!finite) fd.non_finite.push_back(work.name(p));
  }
  return fd;
}

double max_relative_error(const ParameterSet& a, const ParameterSet& b, double floor) {
  if (!a.same_layout(b)) throw ShapeError("grads", "gradient sets differ in layout");
  double worst = 0.0;
  for (std::size_t p = 0; p < a.size(); ++p) {
    double diff = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a[p].size(); ++i) {
      const double x = a[p][i], y = b[p][i];
      diff += (x - y) * (x - y);
      na += x * x;
      nb += y * y;
    }
    const double denom = std::max({std::sqrt(na), std::sqrt(nb), floor});
    worst = std::max(worst, std::sqrt(diff) / denom);
  }
  return worst;
}

double relative_error(const ParameterSet& a, const ParameterSet& b, double floor) {
  if (!a.same_layout(b)) throw ShapeError("grads", "gradient sets differ in layout");
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t p = 0; p < a.size(); ++p)
    for (std::size_t i = 0; i < a[p].size(); ++i) {
      const double x = a[p][i], y = b[p][i];
      diff += (x - y) * (x - y);
      na += x * x;
      nb += y * y;
    }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

}  // namespace subjectlab
