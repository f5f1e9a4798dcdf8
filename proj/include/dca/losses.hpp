#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "dca/error.hpp"
#include "dca/tensor.hpp"

namespace dca {

// Probabilities are floored at this value inside every logarithm.
inline constexpr double kProbFloor = 1e-12;
inline const double kLogProbFloor = std::log(kProbFloor);

// A constant target distribution for the consistency term. Never receives
// gradient.
class ReferenceDistribution {
 public:
  explicit ReferenceDistribution(Tensor probs) : probs_(std::move(probs)) {
    if (probs_.rank() != 2) throw DimensionError("reference distribution must be [batch, C]");
    for (std::size_t r = 0; r < probs_.dim(0); ++r) {
      double sum = 0.0;
      for (double p : probs_.row(r)) {
        if (!(p >= 0.0)) throw DataError("reference distribution has a negative or NaN entry");
        sum += p;
      }
      if (std::abs(sum - 1.0) > 1e-9)
        throw DataError("reference distribution row " + std::to_string(r) + " sums to " +
                        std::to_string(sum));
    }
  }
  const Tensor& probs() const noexcept { return probs_; }

 private:
  Tensor probs_;
};

struct LossResult {
  double value = 0.0;
  double nll = 0.0;
  double kl = 0.0;
  // d(value)/d(log_probs), same shape as the log-probabilities.
  Tensor grad_log_probs;
  // Number of log-probabilities that hit the floor.
  std::size_t clamped = 0;
};

namespace detail {

inline void check_labels(const Tensor& log_probs, std::span<const int> labels) {
  if (log_probs.rank() != 2) throw DimensionError("log-probabilities must be [batch, C]");
  if (labels.size() != log_probs.dim(0))
    throw DimensionError("label count " + std::to_string(labels.size()) + " != batch size " +
                         std::to_string(log_probs.dim(0)));
  if (log_probs.dim(0) == 0) throw DimensionError("empty batch");
  const auto classes = static_cast<int>(log_probs.dim(1));
  for (int y : labels)
    if (y < 0 || y >= classes)
      throw DataError("label " + std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");
}

inline void add_nll(const Tensor& log_probs, std::span<const int> labels, LossResult& out) {
  const std::size_t batch = log_probs.dim(0);
  const double inv = 1.0 / static_cast<double>(batch);
  for (std::size_t r = 0; r < batch; ++r) {
    const double lp = log_probs(r, static_cast<std::size_t>(labels[r]));
    if (lp < kLogProbFloor) {
      out.nll -= kLogProbFloor * inv;
      ++out.clamped;
    } else {
      out.nll -= lp * inv;
      out.grad_log_probs(r, static_cast<std::size_t>(labels[r])) -= inv;
    }
  }
}

inline void add_kl(const Tensor& log_probs, const Tensor& ref, double weight, LossResult& out) {
  if (ref.shape() != log_probs.shape())
    throw DimensionError("reference shape " + shape_string(ref.shape()) + " != prediction shape " +
                         shape_string(log_probs.shape()));
  const std::size_t batch = log_probs.dim(0);
  const double inv = 1.0 / static_cast<double>(batch);
  for (std::size_t r = 0; r < batch; ++r) {
    for (std::size_t c = 0; c < log_probs.dim(1); ++c) {
      const double q = ref(r, c);
      if (q == 0.0) continue;
      double lp = log_probs(r, c);
      if (lp < kLogProbFloor) {
        lp = kLogProbFloor;
        ++out.clamped;
      } else {
        out.grad_log_probs(r, c) -= weight * q * inv;
      }
      out.kl += q * (std::log(q) - lp) * inv;
    }
  }
}

}  // namespace detail

// Mean negative log-likelihood over the batch.
inline LossResult nll(const Tensor& log_probs, std::span<const int> labels) {
  detail::check_labels(log_probs, labels);
  LossResult out;
  out.grad_log_probs = Tensor(log_probs.shape());
  detail::add_nll(log_probs, labels, out);
  out.value = out.nll;
  return out;
}

// Consistency enforcing loss: NLL plus the batch-mean forward KL(ref || p).
inline LossResult cel(const Tensor& log_probs, std::span<const int> labels,
                      const ReferenceDistribution& ref, double kl_weight = 1.0) {
  detail::check_labels(log_probs, labels);
  LossResult out;
  out.grad_log_probs = Tensor(log_probs.shape());
  detail::add_nll(log_probs, labels, out);
  detail::add_kl(log_probs, ref.probs(), kl_weight, out);
  out.value = out.nll + kl_weight * out.kl;
  return out;
}

// Chain rule through log-softmax: given dL/d(log p), return dL/d(logits).
inline Tensor log_softmax_backward(const Tensor& log_probs, const Tensor& grad_log_probs) {
  Tensor out(log_probs.shape());
  for (std::size_t r = 0; r < log_probs.dim(0); ++r) {
    double total = 0.0;
    for (double g : grad_log_probs.row(r)) total += g;
    for (std::size_t c = 0; c < log_probs.dim(1); ++c)
      out(r, c) = grad_log_probs(r, c) - std::exp(log_probs(r, c)) * total;
  }
  return out;
}

}  // namespace dca
