#include "v2m/core/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "v2m/core/error.hpp"

namespace v2m {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != data_.size()) {
    throw DimensionError("tensor shape " + shape_str(shape_) + " does not match data length " +
                         std::to_string(data_.size()));
  }
}

std::size_t Tensor::flat_index(std::initializer_list<std::size_t> idx) const {
  if (idx.size() != shape_.size()) {
    throw DimensionError("index rank " + std::to_string(idx.size()) + " for tensor " + shape_str(shape_));
  }
  std::size_t flat = 0;
  std::size_t d = 0;
  for (std::size_t i : idx) {
    if (i >= shape_[d]) throw DimensionError("index out of range for tensor " + shape_str(shape_));
    flat = flat * shape_[d] + i;
    ++d;
  }
  return flat;
}

double& Tensor::at(std::initializer_list<std::size_t> idx) { return data_[flat_index(idx)]; }
double Tensor::at(std::initializer_list<std::size_t> idx) const { return data_[flat_index(idx)]; }

double Tensor::item() const {
  if (data_.size() != 1) throw DimensionError("item() on tensor " + shape_str(shape_));
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const& {
  Tensor t = *this;
  return std::move(t).reshaped(std::move(shape));
}

Tensor Tensor::reshaped(Shape shape) && {
  if (shape_numel(shape) != data_.size()) {
    throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  shape_ = std::move(shape);
  return std::move(*this);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace v2m
