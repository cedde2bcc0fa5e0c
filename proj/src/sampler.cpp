#include "subjectlab/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include "subjectlab/error.hpp"

namespace subjectlab {

std::string sampler_kind_name(SamplerKind kind) {
  return kind == SamplerKind::Ddim ? "ddim" : "ancestral";
}

SamplerKind parse_sampler_kind(const std::string& name) {
  if (name == "ddim") return SamplerKind::Ddim;
  if (name == "ancestral") return SamplerKind::Ancestral;
  throw ValueError("unknown sampler kind '" + name + "'");
}

SamplerSpec SamplerSpec::uniform(SamplerKind kind, std::size_t steps, bool clamp) {
  if (steps < 2) throw ValueError("sampler grid needs at least 2 points");
  SamplerSpec s;
  s.kind = kind;
  s.clamp_output = clamp;
  s.grid.resize(steps);
  for (std::size_t i = 0; i < steps; ++i)
    s.grid[i] = 1.0 - static_cast<double>(i) / static_cast<double>(steps - 1);
  s.grid.front() = 1.0;
  s.grid.back() = 0.0;
  return s;
}

void SamplerSpec::validate() const {
  if (grid.size() < 2) throw ValueError("sampler grid needs at least 2 points");
  if (grid.front() != 1.0 || grid.back() != 0.0)
    throw ValueError("sampler grid must start at 1 and end at 0");
  for (std::size_t i = 1; i < grid.size(); ++i)
    if (!(grid[i] < grid[i - 1]))
      throw ValueError("sampler grid must be strictly decreasing (index " + std::to_string(i) +
                       ")");
}

namespace {

Tensor rows_of(const Tensor& t, std::size_t rows) {
  if (t.rows() == rows) return t.reshaped({rows, t.cols()});
  if (t.rows() != 1)
    throw ShapeError("cond", "conditioning has " + std::to_string(t.rows()) +
                                 " rows for a batch of " + std::to_string(rows));
  Tensor out({rows, t.cols()});
  for (std::size_t r = 0; r < rows; ++r)
    std::copy(t.data().begin(), t.data().end(), out.raw() + r * t.cols());
  return out;
}

Tensor slice_rows(const Tensor& t, std::size_t begin, std::size_t count) {
  Tensor out({count, t.cols()});
  std::copy_n(t.raw() + begin * t.cols(), count * t.cols(), out.raw());
  return out;
}

void clamp_unit(Tensor& t) {
  for (auto& v : t.data()) v = std::clamp(v, -1.0f, 1.0f);
}

void require_kind(const SamplerSpec& spec, SamplerKind kind) {
  spec.validate();
  if (spec.kind != kind)
    throw ValueError("sampler spec kind is " + sampler_kind_name(spec.kind) + ", expected " +
                     sampler_kind_name(kind));
}

}  // namespace

Tensor predict_batch(const Network& net, const ParameterSet& params, const Tensor& z, double t,
                     const Conditioning& cond) {
  const std::size_t rows = z.rows();
  std::vector<Tensor> inputs;
  inputs.reserve(cond.size() + 2);
  inputs.push_back(z.reshaped({rows, z.cols()}));
  inputs.emplace_back(Shape{rows, 1}, static_cast<float>(t));
  for (const auto& c : cond) inputs.push_back(rows_of(c, rows));
  return evaluate(net, params, inputs).at(0);
}

Tensor sample_ddim(const Network& net, const ParameterSet& params, const Conditioning& cond,
                   const SamplerSpec& spec, const Tensor& z_init) {
  require_kind(spec, SamplerKind::Ddim);
  Tensor z = z_init.reshaped({z_init.rows(), z_init.cols()});
  for (std::size_t i = 0; i + 1 < spec.grid.size(); ++i) {
    const auto now = schedule_coeffs(spec.schedule, spec.grid[i]);
    const auto next = schedule_coeffs(spec.schedule, spec.grid[i + 1]);
    const Tensor xhat = predict_batch(net, params, z, spec.grid[i], cond);
    const float a_next = static_cast<float>(next.alpha);
    const float a_now = static_cast<float>(now.alpha);
    const float ratio = static_cast<float>(next.sigma / now.sigma);
    for (std::size_t k = 0; k < z.size(); ++k)
      z[k] = a_next * xhat[k] + ratio * (z[k] - a_now * xhat[k]);
  }
  if (spec.clamp_output) clamp_unit(z);
  return z;
}

Tensor sample_ancestral_rows(const Network& net, const ParameterSet& params,
                             const Conditioning& cond, const SamplerSpec& spec, std::size_t dim,
                             std::span<Rng> rngs) {
  require_kind(spec, SamplerKind::Ancestral);
  const std::size_t rows = rngs.size();
  if (rows == 0) throw ValueError("sample_ancestral: no samples requested");
  Tensor z({rows, dim});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < dim; ++j) z[r * dim + j] = static_cast<float>(rngs[r].normal());
  Tensor xhat;
  for (std::size_t i = 0; i + 1 < spec.grid.size(); ++i) {
    const auto t = schedule_coeffs(spec.schedule, spec.grid[i]);
    const auto s = schedule_coeffs(spec.schedule, spec.grid[i + 1]);
    xhat = predict_batch(net, params, z, spec.grid[i], cond);
    const double a = t.alpha / s.alpha;
    const double v = t.sigma * t.sigma - a * a * s.sigma * s.sigma;
    const double st2 = t.sigma * t.sigma;
    const float cz = static_cast<float>(a * s.sigma * s.sigma / st2);
    const float cx = static_cast<float>(s.alpha * v / st2);
    const float sd = static_cast<float>(std::sqrt(std::max(0.0, v * s.sigma * s.sigma / st2)));
    const bool last = i + 2 == spec.grid.size();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < dim; ++j) {
        const std::size_t k = r * dim + j;
        const float mean = cz * z[k] + cx * xhat[k];
        // No noise is drawn on the final step (its variance is exactly zero).
        z[k] = last ? mean : mean + sd * static_cast<float>(rngs[r].normal());
      }
  }
  if (spec.clamp_output) clamp_unit(z);
  return z;
}

Tensor sample_ancestral(const Network& net, const ParameterSet& params, const Conditioning& cond,
                        const SamplerSpec& spec, std::size_t dim, Rng& rng) {
  return sample_ancestral_rows(net, params, cond, spec, dim, std::span<Rng>(&rng, 1));
}

std::vector<Tensor> sample_batch(const Network& net, const ParameterSet& params,
                                 const Conditioning& cond, const SamplerSpec& spec,
                                 std::size_t dim, std::size_t count, std::uint64_t seed,
                                 std::size_t workers, std::size_t chunk) {
  if (count == 0) throw ValueError("sample_batch: count must be at least 1");
  spec.validate();
  chunk = std::max<std::size_t>(chunk, 1);
  std::vector<Tensor> out(count);
  const std::size_t chunks = (count + chunk - 1) / chunk;

  auto run_chunk = [&](std::size_t ci) {
    const std::size_t begin = ci * chunk;
    const std::size_t n = std::min(chunk, count - begin);
    Conditioning local;
    for (const auto& c : cond)
      local.push_back(c.rows() == count && count > 1 ? slice_rows(c, begin, n) : c);
    std::vector<Rng> rngs;
    rngs.reserve(n);
    for (std::size_t i = 0; i < n; ++i) rngs.emplace_back(derive_seed(seed, begin + i));
    Tensor result;
    if (spec.kind == SamplerKind::Ddim) {
      Tensor z({n, dim});
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < dim; ++j) z[r * dim + j] = static_cast<float>(rngs[r].normal());
      result = sample_ddim(net, params, local, spec, z);
    } else {
      result = sample_ancestral_rows(net, params, local, spec, dim, rngs);
    }
    for (std::size_t r = 0; r < n; ++r) {
      std::vector<float> row(result.row(r).begin(), result.row(r).end());
      out[begin + r] = Tensor({dim}, std::move(row));
    }
  };

  workers = std::clamp<std::size_t>(workers, 1, chunks);
  if (workers == 1) {
    for (std::size_t ci = 0; ci < chunks; ++ci) run_chunk(ci);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t ci = w; ci < chunks; ci += workers) run_chunk(ci);
      });
    for (auto& th : pool) th.join();
  }
  return out;
}

}  // namespace subjectlab
