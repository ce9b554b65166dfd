#pragma once

#include <cassert>
#include <cmath>
#include <cstdint>
#include <vector>

namespace mvdet {

// Dense row-major tensor of doubles. Storage plus indexing only; the layers
// in nn.hpp own the math.
class Tensor {
public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    int64_t n = 1;
    for (int d : shape_) {
      assert(d >= 0);
      n *= d;
    }
    data_.assign(size_t(n), 0.0);
  }

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<int> shape, double v) {
    Tensor t(std::move(shape));
    for (double& x : t.data_) x = v;
    return t;
  }

  const std::vector<int>& shape() const { return shape_; }
  int ndim() const { return int(shape_.size()); }
  int dim(int i) const { return shape_[size_t(i)]; }
  int64_t size() const { return int64_t(data_.size()); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](int64_t i) { return data_[size_t(i)]; }
  double operator[](int64_t i) const { return data_[size_t(i)]; }

  double& at(int i, int j) { return data_[size_t(i) * shape_[1] + j]; }
  const double& at(int i, int j) const { return data_[size_t(i) * shape_[1] + j]; }

  double& at(int i, int j, int k) {
    return data_[(size_t(i) * shape_[1] + j) * shape_[2] + k];
  }
  const double& at(int i, int j, int k) const {
    return data_[(size_t(i) * shape_[1] + j) * shape_[2] + k];
  }

  double& at(int i, int j, int k, int l) {
    return data_[((size_t(i) * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }
  const double& at(int i, int j, int k, int l) const {
    return data_[((size_t(i) * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }

  Tensor reshaped(std::vector<int> new_shape) const {
    Tensor t;
    t.shape_ = std::move(new_shape);
    int64_t n = 1;
    for (int d : t.shape_) n *= d;
    assert(n == size());
    t.data_ = data_;
    return t;
  }

  void fill(double v) {
    for (double& x : data_) x = v;
  }

  bool all_finite() const {
    for (double x : data_)
      if (!std::isfinite(x)) return false;
    return true;
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

private:
  std::vector<int> shape_;
  std::vector<double> data_;
};

}  // namespace mvdet
