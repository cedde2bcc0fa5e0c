#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace subjectlab {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

// Dense row-major float32 tensor. Every dimension is positive and the data
// length always equals the product of the shape.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> data);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  // For rank-2 tensors; a rank-1 tensor is treated as a single row.
  std::size_t rows() const noexcept;
  std::size_t cols() const noexcept;

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }
  float* raw() noexcept { return data_.data(); }
  const float* raw() const noexcept { return data_.data(); }

  float& operator[](std::size_t i) noexcept { return data_[i]; }
  float operator[](std::size_t i) const noexcept { return data_[i]; }

  std::span<float> row(std::size_t r) noexcept;
  std::span<const float> row(std::size_t r) const noexcept;

  // Same data viewed under another shape of equal size.
  Tensor reshaped(Shape shape) const&;
  Tensor reshaped(Shape shape) &&;

  bool all_finite() const noexcept;
  void fill(float v) noexcept;

  friend bool operator==(const Tensor& a, const Tensor& b) = default;

 private:
  Shape shape_;
  std::vector<float> data_;
};

// C = A * B for A:[M,K], B:[K,N]. Each output element accumulates over k in
// ascending order with fused multiply-add, so a row of C depends only on the
// matching row of A and never on M or on how rows are partitioned.
void matmul(const float* a, const float* b, float* c, std::size_t m,
            std::size_t k, std::size_t n);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// Ordered, uniquely named tensors. Iteration order is insertion order and is
// the order used by checkpoints.
class ParameterSet {
 public:
  std::size_t add(std::string name, Tensor value);

  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }
  bool contains(std::string_view name) const;
  std::size_t index_of(std::string_view name) const;

  const std::string& name(std::size_t i) const { return names_.at(i); }
  const std::vector<std::string>& names() const noexcept { return names_; }
  Tensor& operator[](std::size_t i) { return values_.at(i); }
  const Tensor& operator[](std::size_t i) const { return values_.at(i); }
  Tensor& at(std::string_view name) { return values_[index_of(name)]; }
  const Tensor& at(std::string_view name) const {
    return values_[index_of(name)];
  }

  std::size_t scalar_count() const noexcept;

  // Same names and shapes, all zeros.
  ParameterSet zeros_like() const;
  bool same_layout(const ParameterSet& other) const;

  // Appends all of `other`'s tensors under `prefix`.
  void append(const ParameterSet& other, std::string_view prefix);
  // Tensors whose name starts with `prefix`, with the prefix removed.
  ParameterSet extract(std::string_view prefix) const;

  friend bool operator==(const ParameterSet& a, const ParameterSet& b) {
    return a.names_ == b.names_ && a.values_ == b.values_;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
  std::unordered_map<std::string, std::size_t> index_;
};

// 64-bit FNV-1a over names, shapes and raw float bytes.
std::uint64_t hash_parameters(const ParameterSet& params);

}  // namespace subjectlab
