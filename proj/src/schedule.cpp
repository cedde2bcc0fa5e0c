#include "subjectlab/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "subjectlab/error.hpp"

namespace subjectlab {

double NoiseSchedule::clamp_training_time(double t) const {
  return std::clamp(t, train_t_min, 1.0);
}

ScheduleCoeffs schedule_coeffs(const NoiseSchedule& schedule, double t) {
  if (!(t >= 0.0 && t <= 1.0))
    throw ValueError("diffusion time " + std::to_string(t) + " outside [0,1]");
  switch (schedule.kind) {
    case ScheduleKind::CosineVP: {
      const double angle = 0.5 * std::numbers::pi * t;
      // Exact endpoints: cos(pi/2) is not exactly zero in floating point.
      if (t == 0.0) return {1.0, 0.0, 1.0};
      if (t == 1.0) return {0.0, 1.0, 1.0};
      return {std::cos(angle), std::sin(angle), 1.0};
    }
  }
  throw ValueError("unknown schedule kind");
}

void diffuse_into(const ScheduleCoeffs& c, std::span<const float> x,
                  std::span<const float> eps, std::span<float> z) {
  const float a = static_cast<float>(c.alpha);
  const float s = static_cast<float>(c.sigma);
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = a * x[i] + s * eps[i];
}

ForwardSample forward_diffuse(const NoiseSchedule& schedule, const Tensor& x, double t,
                              const Tensor& eps) {
  if (x.shape() != eps.shape())
    throw ShapeError("eps", "shape " + shape_string(eps.shape()) + " differs from image " +
                                shape_string(x.shape()));
  for (float v : x.data())
    if (!(v >= -1.0f && v <= 1.0f)) throw ValueError("image value outside [-1,1]");
  const auto c = schedule_coeffs(schedule, t);
  ForwardSample s{x, t, eps, Tensor(x.shape())};
  diffuse_into(c, x.data(), eps.data(), s.z.data());
  return s;
}

}  // namespace subjectlab
