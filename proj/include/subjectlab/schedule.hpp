#pragma once

#include <string>

#include "subjectlab/tensor.hpp"

namespace subjectlab {

enum class ScheduleKind { CosineVP };

struct ScheduleCoeffs {
  double alpha = 1.0;
  double sigma = 0.0;
  double weight = 1.0;
};

// Variance-preserving cosine schedule: alpha(t) = cos(pi t / 2),
// sigma(t) = sin(pi t / 2), loss weight w(t) = 1.
struct NoiseSchedule {
  ScheduleKind kind = ScheduleKind::CosineVP;
  // Training draws t ~ U[0,1] and clamps it to [train_t_min, 1].
  double train_t_min = 1e-4;

  std::string kind_name() const { return "cosine-vp"; }
  double clamp_training_time(double t) const;
};

// Throws ValueError for t outside [0,1].
ScheduleCoeffs schedule_coeffs(const NoiseSchedule& schedule, double t);

struct ForwardSample {
  Tensor x;
  double t = 0.0;
  Tensor eps;
  Tensor z;
};

// z = alpha_t x + sigma_t eps. Requires x in [-1,1] and eps shaped like x.
ForwardSample forward_diffuse(const NoiseSchedule& schedule, const Tensor& x, double t,
                              const Tensor& eps);

// The same combination written into `z` without validation or copies; used
// by the training loops on whole batches.
void diffuse_into(const ScheduleCoeffs& c, std::span<const float> x,
                  std::span<const float> eps, std::span<float> z);

}  // namespace subjectlab
