#pragma once

#include <cstddef>
#include <memory>
#include <vector>

namespace s2p {

// Dense row-major double tensor, rank 1..4. Copies share storage until a
// mutable access detaches them, so passing large weight tensors around by
// value stays cheap.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape);
  Tensor(std::vector<int> shape, std::vector<double> values);

  static Tensor zeros(std::vector<int> shape);
  static Tensor full(std::vector<int> shape, double value);
  static Tensor scalar(double value);

  bool empty() const { return data_ == nullptr; }
  const std::vector<int>& shape() const { return shape_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  std::size_t numel() const { return numel_; }
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  const double* data() const { return data_->data(); }
  double* mutable_data() {
    ensure_unique();
    return data_->data();
  }

  double operator[](std::size_t i) const { return (*data_)[i]; }

  double at(int i) const { return (*data_)[idx(i)]; }
  double at(int i, int j) const { return (*data_)[idx(i, j)]; }
  double at(int i, int j, int k) const { return (*data_)[idx(i, j, k)]; }
  double at(int i, int j, int k, int l) const { return (*data_)[idx(i, j, k, l)]; }

  std::size_t idx(int i) const { return static_cast<std::size_t>(i); }
  std::size_t idx(int i, int j) const {
    return static_cast<std::size_t>(i) * strides_[0] + static_cast<std::size_t>(j);
  }
  std::size_t idx(int i, int j, int k) const {
    return static_cast<std::size_t>(i) * strides_[0] +
           static_cast<std::size_t>(j) * strides_[1] + static_cast<std::size_t>(k);
  }
  std::size_t idx(int i, int j, int k, int l) const {
    return static_cast<std::size_t>(i) * strides_[0] +
           static_cast<std::size_t>(j) * strides_[1] +
           static_cast<std::size_t>(k) * strides_[2] + static_cast<std::size_t>(l);
  }

  // Same storage, new shape; element count must match.
  Tensor reshaped(std::vector<int> shape) const;

  bool all_finite() const;
  double max_abs_diff(const Tensor& other) const;
  double frobenius_norm() const;
  void fill(double value);

 private:
  void ensure_unique();
  void init_strides();

  std::vector<int> shape_;
  std::vector<std::size_t> strides_;  // strides for dims 0..ndim-2
  std::size_t numel_ = 0;
  std::shared_ptr<std::vector<double>> data_;
};

}  // namespace s2p
