#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "mgst/error.hpp"
#include "mgst/real.hpp"

namespace mgst {
inline namespace MGST_ABI {

using Shape = std::vector<std::int64_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major N-dimensional array. The only value type in the library.
///
/// Video features use the [N, C, T, H, W] layout; single samples drop N.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, Real fill = Real(0));
  Tensor(Shape shape, std::vector<Real> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), Real(1)); }
  static Tensor scalar(Real v) { return Tensor(Shape{}, std::vector<Real>{v}); }

  const Shape& shape() const noexcept { return shape_; }
  int rank() const noexcept { return static_cast<int>(shape_.size()); }
  std::int64_t dim(int axis) const;
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  Real* data() noexcept { return data_.data(); }
  const Real* data() const noexcept { return data_.data(); }
  std::span<Real> values() noexcept { return data_; }
  std::span<const Real> values() const noexcept { return data_; }

  Real& operator[](std::size_t i) noexcept { return data_[i]; }
  Real operator[](std::size_t i) const noexcept { return data_[i]; }

  Real& at(std::initializer_list<std::int64_t> idx);
  Real at(std::initializer_list<std::int64_t> idx) const;

  /// Same data, new shape. Element count must match.
  Tensor reshaped(Shape shape) const&;
  Tensor reshaped(Shape shape) &&;

  void fill(Real v);
  bool all_finite() const;

  /// Bitwise equality of shape and payload.
  bool identical(const Tensor& other) const;

 private:
  std::size_t offset(std::initializer_list<std::int64_t> idx) const;

  Shape shape_;
  std::vector<Real> data_;
};

void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

}  // namespace MGST_ABI
}  // namespace mgst
