#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "subjectlab/tensor.hpp"

namespace subjectlab {

// Seed splitting. Every random stream in the repo is derived from one master
// seed with these two functions:
//
//   derive_seed(master, i)      = splitmix64(master ^ splitmix64(i + 0x9E3779B97F4A7C15))
//   derive_seed(master, label)  = derive_seed(master, fnv1a64(label))
//
// Sample i of a batch uses derive_seed(batch_seed, i), so serial and parallel
// generation produce identical sets.
std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index);
std::uint64_t derive_seed(std::uint64_t master, std::string_view label);

// mt19937_64 with portable float conversions (53-bit uniforms, Box-Muller
// normals) so draws are identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform();                 // [0, 1)
  double uniform(double lo, double hi);
  std::uint64_t below(std::uint64_t n);  // [0, n), unbiased
  double normal();
  Tensor normal_tensor(const Shape& shape);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace subjectlab
