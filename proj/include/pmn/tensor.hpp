#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "pmn/common.hpp"

namespace pmn {

/// Dense, row-major, 64-bit float tensor with an optional gradient buffer.
/// This is the persistent storage type: parameters, rendered features and
/// checkpoint payloads live here. Values recorded during a differentiable
/// computation are Tape nodes (see tape.hpp) referencing these.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<size_t> shape) : shape_(std::move(shape)) {
    data_.assign(count(shape_), 0.0);
  }

  Tensor(std::vector<size_t> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (count(shape_) != data_.size())
      throw ShapeError(strformat("tensor: shape wants %zu values, got %zu",
                                 count(shape_), data_.size()));
  }

  static Tensor scalar(double v) { return Tensor({}, {v}); }
  static Tensor vec(std::vector<double> v) {
    size_t n = v.size();
    return Tensor({n}, std::move(v));
  }
  static Tensor mat(size_t r, size_t c, std::vector<double> v) {
    return Tensor({r, c}, std::move(v));
  }
  static Tensor zeros(std::vector<size_t> shape) { return Tensor(std::move(shape)); }

  const std::vector<size_t>& shape() const { return shape_; }
  size_t rank() const { return shape_.size(); }
  size_t size() const { return data_.size(); }
  size_t dim(size_t i) const { return shape_.at(i); }

  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](size_t i) { return data_[i]; }
  double operator[](size_t i) const { return data_[i]; }
  double& at2(size_t r, size_t c) { return data_[r * shape_[1] + c]; }
  double at2(size_t r, size_t c) const { return data_[r * shape_[1] + c]; }

  bool has_grad() const { return !grad_.empty(); }
  /// Gradient buffer, allocated to zeros on first use.
  std::vector<double>& grad() {
    if (grad_.empty()) grad_.assign(data_.size(), 0.0);
    return grad_;
  }
  const std::vector<double>& grad() const { return grad_; }
  void zero_grad() { grad_.assign(data_.size(), 0.0); }
  void drop_grad() { grad_.clear(); }

  static size_t count(const std::vector<size_t>& shape) {
    size_t n = 1;
    for (size_t d : shape) n *= d;
    return n;
  }

  static std::string shape_str(const std::vector<size_t>& shape) {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(shape[i]);
    }
    return s + "]";
  }

 private:
  std::vector<size_t> shape_;
  std::vector<double> data_;
  std::vector<double> grad_;
};

}  // namespace pmn
