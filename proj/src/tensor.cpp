#include "s2p/tensor.hpp"

#include <cmath>
#include <cstdlib>
#include <utility>

#include "s2p/error.hpp"

namespace s2p {

namespace {

std::size_t product(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw PreconditionError("tensor dimensions must be positive");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

}  // namespace

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
  numel_ = product(shape_);
  data_ = std::make_shared<std::vector<double>>(numel_, 0.0);
  init_strides();
}

Tensor::Tensor(std::vector<int> shape, std::vector<double> values)
    : shape_(std::move(shape)) {
  numel_ = product(shape_);
  if (values.size() != numel_)
    throw PreconditionError("tensor value count does not match shape");
  data_ = std::make_shared<std::vector<double>>(std::move(values));
  init_strides();
}

Tensor Tensor::zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

Tensor Tensor::full(std::vector<int> shape, double value) {
  Tensor t(std::move(shape));
  t.fill(value);
  return t;
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

Tensor Tensor::reshaped(std::vector<int> shape) const {
  Tensor t;
  t.shape_ = std::move(shape);
  t.numel_ = product(t.shape_);
  if (t.numel_ != numel_)
    throw PreconditionError("reshape changes element count");
  t.data_ = data_;
  t.init_strides();
  return t;
}

bool Tensor::all_finite() const {
  for (double v : *data_)
    if (!std::isfinite(v)) return false;
  return true;
}

double Tensor::max_abs_diff(const Tensor& other) const {
  if (!same_shape(other))
    throw PreconditionError("max_abs_diff on mismatched shapes");
  double m = 0.0;
  for (std::size_t i = 0; i < numel_; ++i)
    m = std::max(m, std::abs((*data_)[i] - (*other.data_)[i]));
  return m;
}

double Tensor::frobenius_norm() const {
  double s = 0.0;
  for (double v : *data_) s += v * v;
  return std::sqrt(s);
}

void Tensor::fill(double value) {
  ensure_unique();
  for (double& v : *data_) v = value;
}

void Tensor::ensure_unique() {
  if (data_.use_count() > 1)
    data_ = std::make_shared<std::vector<double>>(*data_);
}

void Tensor::init_strides() {
  strides_.assign(shape_.size() > 1 ? shape_.size() - 1 : 0, 1);
  for (int i = static_cast<int>(strides_.size()) - 1; i >= 0; --i) {
    std::size_t s = static_cast<std::size_t>(shape_[static_cast<std::size_t>(i) + 1]);
    strides_[static_cast<std::size_t>(i)] =
        (static_cast<std::size_t>(i) + 1 < strides_.size())
            ? strides_[static_cast<std::size_t>(i) + 1] * s
            : s;
  }
}

}  // namespace s2p
