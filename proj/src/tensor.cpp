#include "mgst/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

namespace mgst {
inline namespace MGST_ABI {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kShapeMismatch: return "shape_mismatch";
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kBadMagic: return "bad_magic";
    case ErrorCode::kTruncatedPayload: return "truncated_payload";
    case ErrorCode::kExtentMismatch: return "extent_mismatch";
    case ErrorCode::kVersionMismatch: return "version_mismatch";
    case ErrorCode::kPresetMismatch: return "preset_mismatch";
    case ErrorCode::kNonFinite: return "non_finite";
    case ErrorCode::kNonDeterministic: return "non_deterministic";
    case ErrorCode::kConfig: return "config";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kEmptyDataset: return "empty_dataset";
  }
  return "unknown";
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) {
    require(e >= 0, ErrorCode::kInvalidArgument, "negative extent in shape " + shape_str(shape));
    n *= static_cast<std::size_t>(e);
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, Real fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<Real> data) : shape_(std::move(shape)), data_(std::move(data)) {
  require(data_.size() == shape_numel(shape_), ErrorCode::kShapeMismatch,
          "tensor payload has " + std::to_string(data_.size()) + " values but shape " + shape_str(shape_) +
              " needs " + std::to_string(shape_numel(shape_)));
}

std::int64_t Tensor::dim(int axis) const {
  if (axis < 0) axis += rank();
  require(axis >= 0 && axis < rank(), ErrorCode::kInvalidArgument,
          "axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape_));
  return shape_[static_cast<std::size_t>(axis)];
}

std::size_t Tensor::offset(std::initializer_list<std::int64_t> idx) const {
  require(idx.size() == shape_.size(), ErrorCode::kInvalidArgument, "index rank mismatch");
  std::size_t off = 0;
  std::size_t axis = 0;
  for (auto i : idx) {
    require(i >= 0 && i < shape_[axis], ErrorCode::kInvalidArgument, "index out of range");
    off = off * static_cast<std::size_t>(shape_[axis]) + static_cast<std::size_t>(i);
    ++axis;
  }
  return off;
}

Real& Tensor::at(std::initializer_list<std::int64_t> idx) { return data_[offset(idx)]; }
Real Tensor::at(std::initializer_list<std::int64_t> idx) const { return data_[offset(idx)]; }

Tensor Tensor::reshaped(Shape shape) const& {
  Tensor t = *this;
  return std::move(t).reshaped(std::move(shape));
}

Tensor Tensor::reshaped(Shape shape) && {
  require(shape_numel(shape) == data_.size(), ErrorCode::kShapeMismatch,
          "cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  shape_ = std::move(shape);
  return std::move(*this);
}

void Tensor::fill(Real v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  for (Real v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

bool Tensor::identical(const Tensor& other) const {
  return shape_ == other.shape_ &&
         (data_.empty() || std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(Real)) == 0);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() == b.shape()) return;
  std::string msg = std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape());
  if (a.rank() == b.rank()) {
    for (int i = 0; i < a.rank(); ++i) {
      if (a.shape()[i] != b.shape()[i]) {
        msg += " (axis " + std::to_string(i) + ")";
        break;
      }
    }
  } else {
    msg += " (rank)";
  }
  fail(ErrorCode::kShapeMismatch, msg);
}

}  // namespace MGST_ABI
}  // namespace mgst
