#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dca/error.hpp"

namespace dca {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

// Dense row-major array of doubles with an optional gradient slot.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_size(shape_) != data_.size())
      throw DimensionError("tensor shape " + shape_string(shape_) + " does not hold " +
                           std::to_string(data_.size()) + " values");
  }

  static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data) {
    return Tensor(Shape{rows, cols}, std::move(data));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Rank-2 element access.
  double& operator()(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * shape_[1], shape_[1]}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * shape_[1], shape_[1]}; }

  bool has_grad() const noexcept { return grad_.has_value(); }
  void enable_grad() {
    if (!grad_) grad_.emplace(data_.size(), 0.0);
  }
  void zero_grad() {
    if (grad_) std::fill(grad_->begin(), grad_->end(), 0.0);
  }
  std::span<double> grad() {
    if (!grad_) throw StateError("tensor has no gradient slot");
    return *grad_;
  }
  std::span<const double> grad() const {
    if (!grad_) throw StateError("tensor has no gradient slot");
    return *grad_;
  }

  bool all_finite() const noexcept {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
  std::optional<std::vector<double>> grad_;
};

// Row-wise softmax over the last axis of a rank-2 tensor, max-subtracted.
inline Tensor softmax(const Tensor& logits) {
  if (logits.rank() != 2 || logits.dim(1) < 2)
    throw DimensionError("softmax expects [batch, C>=2] logits, got " + shape_string(logits.shape()));
  if (!logits.all_finite()) throw NumericError("softmax input is not finite");
  Tensor out(logits.shape());
  const std::size_t classes = logits.dim(1);
  for (std::size_t r = 0; r < logits.dim(0); ++r) {
    auto in = logits.row(r);
    auto o = out.row(r);
    double mx = in[0];
    for (double v : in) mx = std::max(mx, v);
    double sum = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      o[c] = std::exp(in[c] - mx);
      sum += o[c];
    }
    for (double& v : o) v /= sum;
  }
  return out;
}

inline Tensor log_softmax(const Tensor& logits) {
  if (logits.rank() != 2 || logits.dim(1) < 2)
    throw DimensionError("log_softmax expects [batch, C>=2] logits, got " +
                         shape_string(logits.shape()));
  Tensor out(logits.shape());
  for (std::size_t r = 0; r < logits.dim(0); ++r) {
    auto in = logits.row(r);
    auto o = out.row(r);
    double mx = in[0];
    for (double v : in) mx = std::max(mx, v);
    double sum = 0.0;
    for (double v : in) sum += std::exp(v - mx);
    const double lse = mx + std::log(sum);
    for (std::size_t c = 0; c < in.size(); ++c) o[c] = in[c] - lse;
  }
  return out;
}

}  // namespace dca
