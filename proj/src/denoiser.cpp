#include "subjectlab/denoiser.hpp"

#include <algorithm>
#include <cmath>

#include "subjectlab/error.hpp"

namespace subjectlab {

void DenoiserConfig::validate() const {
  if (!height || !width || !channels || !hidden || !blocks || !time_dim || !cond_dim)
    throw ValueError("denoiser config: all dimensions must be positive");
  if (time_dim % 2) throw ValueError("denoiser config: time_dim must be even");
  if (!(sigma_data > 0.0)) throw ValueError("denoiser config: sigma_data must be positive");
  if (!(skip_sigma > 0.0)) throw ValueError("denoiser config: skip_sigma must be positive");
}

std::vector<float> time_embedding(double t, std::size_t dim) {
  const std::size_t half = dim / 2;
  std::vector<float> e(dim);
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = kTimeEmbeddingMaxFreq * std::exp(-std::log(10000.0) * static_cast<double>(i) /
                                          static_cast<double>(half));
    e[i] = static_cast<float>(std::sin(freq * t));
    e[half + i] = static_cast<float>(std::cos(freq * t));
  }
  return e;
}

namespace {

Tensor embed_rows(const std::vector<float>& values, std::size_t dim) {
  Tensor out({values.size(), dim});
  for (std::size_t r = 0; r < values.size(); ++r) {
    const auto e = time_embedding(values[r], dim);
    std::copy(e.begin(), e.end(), out.raw() + r * dim);
  }
  return out;
}

Tensor lecun_normal(Rng& rng, std::size_t in, std::size_t out, double gain) {
  Tensor w({in, out});
  const double sd = gain / std::sqrt(static_cast<double>(in));
  for (auto& v : w.data()) v = static_cast<float>(sd * rng.normal());
  return w;
}

}  // namespace

DenoiserNet::DenoiserNet(DenoiserConfig config, std::string prefix)
    : config_(std::move(config)), prefix_(std::move(prefix)) {
  config_.validate();
}

std::vector<InputSpec> DenoiserNet::input_specs() const {
  std::vector<InputSpec> specs = {{"z", config_.image_size()},
                                  {"t", 1},
                                  {"c", config_.cond_dim}};
  if (config_.image_cond_channels) {
    specs.push_back({"image_cond", config_.image_cond_size()});
    specs.push_back({"level", 1});
  }
  return specs;
}

ParameterSet DenoiserNet::init_parameters() const {
  const auto& c = config_;
  Rng rng(derive_seed(c.seed, "denoiser-init"));
  const std::size_t extra = c.image_cond_channels ? c.image_cond_size() + c.time_dim : 0;
  const std::size_t side = c.time_dim + c.cond_dim + (c.image_cond_channels ? c.time_dim : 0);
  ParameterSet p;
  const std::size_t in_width = c.image_size() + extra + c.time_dim + c.cond_dim;
  p.add(prefix_ + "in.w", lecun_normal(rng, in_width, c.hidden, 1.0));
  p.add(prefix_ + "in.b", Tensor({c.hidden}));
  for (std::size_t k = 0; k < c.blocks; ++k) {
    const std::string b = prefix_ + "block" + std::to_string(k) + ".";
    p.add(b + "ln.g", Tensor({c.hidden}, 1.0f));
    p.add(b + "ln.b", Tensor({c.hidden}));
    p.add(b + "fc1.w", lecun_normal(rng, c.hidden + side, c.hidden, 1.0));
    p.add(b + "fc1.b", Tensor({c.hidden}));
    p.add(b + "fc2.w", lecun_normal(rng, c.hidden, c.hidden, 0.2));
    p.add(b + "fc2.b", Tensor({c.hidden}));
  }
  p.add(prefix_ + "out.ln.g", Tensor({c.hidden}, 1.0f));
  p.add(prefix_ + "out.ln.b", Tensor({c.hidden}));
  p.add(prefix_ + "out.w", lecun_normal(rng, c.hidden, c.image_size(), 0.2));
  p.add(prefix_ + "out.b", Tensor({c.image_size()}));
  return p;
}

Var DenoiserNet::forward_x0(Tape& tape, const ParameterSet& params, Var z,
                            const std::vector<float>& t, Var c, const Var* image_cond,
                            const std::vector<float>* level) const {
  const auto& cfg = config_;
  const std::size_t rows = t.size();
  auto P = [&](const std::string& name) { return tape.parameter(params, prefix_ + name); };

  std::vector<float> c_in(rows), c_skip(rows), c_out(rows);
  const double s2 = cfg.sigma_data * cfg.sigma_data;
  for (std::size_t r = 0; r < rows; ++r) {
    const auto co = schedule_coeffs(NoiseSchedule{}, std::clamp<double>(t[r], 0.0, 1.0));
    const double a = co.alpha, s = co.sigma;
    const double k2 = cfg.skip_sigma * cfg.skip_sigma;
    const double d2 = a * a * s2 + s * s;
    c_in[r] = static_cast<float>(1.0 / std::sqrt(d2));
    const double cs = a * k2 / (a * a * k2 + s * s);
    c_skip[r] = static_cast<float>(cs);
    c_out[r] = static_cast<float>(std::sqrt((1 - cs * a) * (1 - cs * a) * s2 + cs * cs * s * s));
  }

  std::vector<Var> side = {tape.constant(embed_rows(t, cfg.time_dim)), c};
  if (cfg.image_cond_channels) {
    if (!image_cond || !level)
      throw ShapeError("image_cond", "super-resolution denoiser requires image_cond and level");
    side.push_back(tape.constant(embed_rows(*level, cfg.time_dim)));
  }

  std::vector<Var> in_parts = {ops::scale_rows(tape, z, c_in)};
  if (cfg.image_cond_channels) in_parts.push_back(*image_cond);
  in_parts.insert(in_parts.end(), side.begin(), side.end());
  Var h = ops::linear(tape, ops::concat(tape, in_parts), P("in.w"), P("in.b"));

  for (std::size_t k = 0; k < cfg.blocks; ++k) {
    const std::string b = "block" + std::to_string(k) + ".";
    std::vector<Var> parts = {ops::layer_norm(tape, h, P(b + "ln.g"), P(b + "ln.b"))};
    parts.insert(parts.end(), side.begin(), side.end());
    Var u = ops::silu(tape, ops::linear(tape, ops::concat(tape, parts), P(b + "fc1.w"),
                                        P(b + "fc1.b")));
    h = ops::add(tape, h, ops::linear(tape, u, P(b + "fc2.w"), P(b + "fc2.b")));
  }
  Var f = ops::silu(tape, ops::layer_norm(tape, h, P("out.ln.g"), P("out.ln.b")));
  f = ops::linear(tape, f, P("out.w"), P("out.b"));
  return ops::add(tape, ops::scale_rows(tape, z, c_skip), ops::scale_rows(tape, f, c_out));
}

std::vector<Var> DenoiserNet::forward(Tape& tape, const ParameterSet& params,
                                      std::span<const Var> inputs) const {
  const Tensor& tv = tape.value(inputs[1]);
  std::vector<float> t(tv.data().begin(), tv.data().end());
  if (config_.image_cond_channels) {
    const Tensor& lv = tape.value(inputs[4]);
    std::vector<float> level(lv.data().begin(), lv.data().end());
    return {forward_x0(tape, params, inputs[0], t, inputs[2], &inputs[3], &level)};
  }
  return {forward_x0(tape, params, inputs[0], t, inputs[2])};
}

DenoiserModel init_denoiser(const DenoiserConfig& config) {
  DenoiserNet net(config);
  return {config, net.init_parameters()};
}

Tensor predict_x0(const DenoiserModel& model, const Tensor& z, double t, const Tensor& c) {
  if (model.config.image_cond_channels)
    throw ValueError("predict_x0: super-resolution models need image conditioning");
  if (!(t >= 0.0 && t <= 1.0)) throw ValueError("predict_x0: t outside [0,1]");
  const std::size_t rows = z.rows();
  if (c.cols() != model.config.cond_dim)
    throw ShapeError("c", "conditioning width " + std::to_string(c.cols()) + " != " +
                              std::to_string(model.config.cond_dim));
  Tensor cb = c;
  if (c.rows() == 1 && rows > 1) {
    cb = Tensor({rows, c.cols()});
    for (std::size_t r = 0; r < rows; ++r)
      std::copy(c.data().begin(), c.data().end(), cb.raw() + r * c.cols());
  }
  const Tensor z2 = z.reshaped({rows, z.cols()});
  const Tensor tt({rows, 1}, static_cast<float>(t));
  DenoiserNet net(model.config);
  const Tensor inputs[] = {z2, tt, cb.reshaped({rows, c.cols()})};
  return evaluate(net, model.params, inputs)[0];
}

LossResult denoising_loss_fixed(const Network& net, const ParameterSet& params,
                                const DenoisingBatch& batch, const NoiseSchedule& schedule,
                                const std::vector<double>& times, const Tensor& eps) {
  const std::size_t rows = batch.images.rows();
  const std::size_t dim = batch.images.cols();
  if (rows == 0 || batch.images.empty()) throw ValueError("denoising_loss: empty batch");
  if (times.size() != rows || eps.size() != rows * dim)
    throw ShapeError("eps", "noise draws do not match the batch");
  std::vector<float> weights = batch.row_weight;
  if (weights.empty()) weights.assign(rows, 1.0f / static_cast<float>(rows));
  if (weights.size() != rows) throw ShapeError("row_weight", "one weight per row required");

  Tensor z({rows, dim});
  Tensor tcol({rows, 1});
  std::vector<double> wt(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto c = schedule_coeffs(schedule, times[r]);
    diffuse_into(c, batch.images.row(r), eps.row(r), z.row(r));
    tcol[r] = static_cast<float>(times[r]);
    wt[r] = c.weight;
  }
  std::vector<Tensor> inputs = {std::move(z), std::move(tcol)};
  for (const auto& c : batch.conds) inputs.push_back(c);
  validate_inputs(net, inputs);

  Tape tape(true);
  std::vector<Var> in;
  for (auto& t : inputs) in.push_back(tape.constant(std::move(t)));
  const Var xhat = net.forward(tape, params, in).at(0);
  const Tensor& xv = tape.value(xhat);

  LossResult res;
  res.per_sample.resize(rows);
  Tensor upstream({rows, dim});
  for (std::size_t r = 0; r < rows; ++r) {
    double sq = 0.0;
    for (std::size_t j = 0; j < dim; ++j) {
      const double d = static_cast<double>(xv[r * dim + j]) - batch.images[r * dim + j];
      sq += d * d;
      upstream[r * dim + j] = static_cast<float>(2.0 * weights[r] * wt[r] * d);
    }
    res.per_sample[r] = wt[r] * sq;
    res.loss += weights[r] * res.per_sample[r];
  }
  if (!std::isfinite(res.loss)) throw NumericError("denoising loss is not finite");
  tape.backward(xhat, upstream);
  res.grads = tape.parameter_grads(params);
  return res;
}

LossResult denoising_loss(const Network& net, const ParameterSet& params,
                          const DenoisingBatch& batch, const NoiseSchedule& schedule, Rng& rng) {
  const std::size_t rows = batch.images.empty() ? 0 : batch.images.rows();
  if (rows == 0) throw ValueError("denoising_loss: empty batch");
  const std::size_t dim = batch.images.cols();
  std::vector<double> times(rows);
  Tensor eps({rows, dim});
  for (std::size_t r = 0; r < rows; ++r) {
    times[r] = schedule.clamp_training_time(rng.uniform());
    for (std::size_t j = 0; j < dim; ++j) eps[r * dim + j] = static_cast<float>(rng.normal());
  }
  return denoising_loss_fixed(net, params, batch, schedule, times, eps);
}

}  // namespace subjectlab
