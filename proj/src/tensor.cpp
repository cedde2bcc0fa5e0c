#include "subjectlab/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <numeric>

#include "subjectlab/error.hpp"

namespace subjectlab {

std::size_t shape_size(const Shape& shape) {
  if (shape.empty()) return 0;
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace {

void check_shape(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor", "shape must have rank >= 1");
  for (auto d : shape)
    if (d == 0)
      throw ShapeError("tensor", "zero dimension in " + shape_string(shape));
}

}  // namespace

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_shape(shape_);
  if (data_.size() != shape_size(shape_))
    throw ShapeError("tensor", "data length " + std::to_string(data_.size()) +
                                   " does not match shape " +
                                   shape_string(shape_));
}

std::size_t Tensor::rows() const noexcept {
  return shape_.size() >= 2 ? shape_[0] : 1;
}

std::size_t Tensor::cols() const noexcept {
  if (shape_.empty()) return 0;
  return shape_.size() >= 2 ? data_.size() / shape_[0] : shape_[0];
}

std::span<float> Tensor::row(std::size_t r) noexcept {
  const auto c = cols();
  return {data_.data() + r * c, c};
}

std::span<const float> Tensor::row(std::size_t r) const noexcept {
  const auto c = cols();
  return {data_.data() + r * c, c};
}

Tensor Tensor::reshaped(Shape shape) const& {
  return Tensor(std::move(shape), data_);
}

Tensor Tensor::reshaped(Shape shape) && {
  return Tensor(std::move(shape), std::move(data_));
}

bool Tensor::all_finite() const noexcept {
  for (float v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

void Tensor::fill(float v) noexcept { std::fill(data_.begin(), data_.end(), v); }

// Blocked over 4 rows of A and 64 columns of B. The k loop is innermost per
// block and always runs 0..K-1, so every C[i][j] sees the same sequence of
// fused multiply-adds regardless of blocking, tail handling or M.
void matmul(const float* a, const float* b, float* c, std::size_t m,
            std::size_t k, std::size_t n) {
  constexpr std::size_t kRows = 4;
  constexpr std::size_t kCols = 64;
  for (std::size_t j0 = 0; j0 < n; j0 += kCols) {
    const std::size_t nj = std::min(kCols, n - j0);
    std::size_t i0 = 0;
    for (; i0 + kRows <= m; i0 += kRows) {
      float acc[kRows][kCols] = {};
      const float* a0 = a + (i0 + 0) * k;
      const float* a1 = a + (i0 + 1) * k;
      const float* a2 = a + (i0 + 2) * k;
      const float* a3 = a + (i0 + 3) * k;
      for (std::size_t p = 0; p < k; ++p) {
        const float* brow = b + p * n + j0;
        const float x0 = a0[p], x1 = a1[p], x2 = a2[p], x3 = a3[p];
        if (nj == kCols) {
          for (std::size_t j = 0; j < kCols; ++j) {
            acc[0][j] = std::fma(x0, brow[j], acc[0][j]);
            acc[1][j] = std::fma(x1, brow[j], acc[1][j]);
            acc[2][j] = std::fma(x2, brow[j], acc[2][j]);
            acc[3][j] = std::fma(x3, brow[j], acc[3][j]);
          }
        } else {
          for (std::size_t j = 0; j < nj; ++j) {
            acc[0][j] = std::fma(x0, brow[j], acc[0][j]);
            acc[1][j] = std::fma(x1, brow[j], acc[1][j]);
            acc[2][j] = std::fma(x2, brow[j], acc[2][j]);
            acc[3][j] = std::fma(x3, brow[j], acc[3][j]);
          }
        }
      }
      for (std::size_t r = 0; r < kRows; ++r)
        std::memcpy(c + (i0 + r) * n + j0, acc[r], nj * sizeof(float));
    }
    for (; i0 < m; ++i0) {
      float acc[kCols] = {};
      const float* arow = a + i0 * k;
      for (std::size_t p = 0; p < k; ++p) {
        const float* brow = b + p * n + j0;
        const float x = arow[p];
        for (std::size_t j = 0; j < nj; ++j) acc[j] = std::fma(x, brow[j], acc[j]);
      }
      std::memcpy(c + i0 * n + j0, acc, nj * sizeof(float));
    }
  }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows())
    throw ShapeError("matmul", "inner dimensions differ: " +
                                   shape_string(a.shape()) + " x " +
                                   shape_string(b.shape()));
  Tensor c({a.rows(), b.cols()});
  matmul(a.raw(), b.raw(), c.raw(), a.rows(), a.cols(), b.cols());
  return c;
}

Tensor transpose(const Tensor& a) {
  const auto r = a.rows(), c = a.cols();
  Tensor t({c, r});
  constexpr std::size_t kBlock = 32;
  for (std::size_t i0 = 0; i0 < r; i0 += kBlock)
    for (std::size_t j0 = 0; j0 < c; j0 += kBlock)
      for (std::size_t i = i0; i < std::min(r, i0 + kBlock); ++i)
        for (std::size_t j = j0; j < std::min(c, j0 + kBlock); ++j)
          t[j * r + i] = a[i * c + j];
  return t;
}

std::size_t ParameterSet::add(std::string name, Tensor value) {
  if (index_.contains(name))
    throw ValueError("duplicate parameter name '" + name + "'");
  const auto i = values_.size();
  index_.emplace(name, i);
  names_.push_back(std::move(name));
  values_.push_back(std::move(value));
  return i;
}

bool ParameterSet::contains(std::string_view name) const {
  return index_.contains(std::string(name));
}

std::size_t ParameterSet::index_of(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end())
    throw ValueError("no parameter named '" + std::string(name) + "'");
  return it->second;
}

std::size_t ParameterSet::scalar_count() const noexcept {
  std::size_t n = 0;
  for (const auto& v : values_) n += v.size();
  return n;
}

ParameterSet ParameterSet::zeros_like() const {
  ParameterSet out;
  for (std::size_t i = 0; i < size(); ++i)
    out.add(names_[i], Tensor(values_[i].shape()));
  return out;
}

bool ParameterSet::same_layout(const ParameterSet& other) const {
  if (size() != other.size()) return false;
  for (std::size_t i = 0; i < size(); ++i)
    if (names_[i] != other.names_[i] ||
        values_[i].shape() != other.values_[i].shape())
      return false;
  return true;
}

void ParameterSet::append(const ParameterSet& other, std::string_view prefix) {
  for (std::size_t i = 0; i < other.size(); ++i)
    add(std::string(prefix) + other.names_[i], other.values_[i]);
}

ParameterSet ParameterSet::extract(std::string_view prefix) const {
  ParameterSet out;
  for (std::size_t i = 0; i < size(); ++i)
    if (std::string_view(names_[i]).starts_with(prefix))
      out.add(names_[i].substr(prefix.size()), values_[i]);
  return out;
}

namespace {

constexpr std::uint64_t kFnvOffset = 1469598103934665603ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

void fnv_bytes(std::uint64_t& h, const void* p, std::size_t n) {
  const auto* bytes = static_cast<const unsigned char*>(p);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= bytes[i];
    h *= kFnvPrime;
  }
}

}  // namespace

std::uint64_t hash_parameters(const ParameterSet& params) {
  std::uint64_t h = kFnvOffset;
  for (std::size_t i = 0; i < params.size(); ++i) {
    fnv_bytes(h, params.name(i).data(), params.name(i).size());
    for (auto d : params[i].shape()) {
      const std::uint64_t d64 = d;
      fnv_bytes(h, &d64, sizeof d64);
    }
    fnv_bytes(h, params[i].raw(), params[i].size() * sizeof(float));
  }
  return h;
}

}  // namespace subjectlab
