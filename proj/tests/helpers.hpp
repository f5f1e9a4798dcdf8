#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "dca/bank.hpp"
#include "dca/data.hpp"
#include "dca/metrics.hpp"
#include "dca/model.hpp"
#include "dca/tensor.hpp"
#include "oracles.hpp"

namespace testing_util {

inline dca::Tensor to_tensor(const oracle::Matrix& m) {
  std::vector<double> flat;
  for (const auto& r : m) flat.insert(flat.end(), r.begin(), r.end());
  return dca::Tensor(dca::Shape{m.size(), m.empty() ? 0 : m[0].size()}, flat);
}

inline oracle::Matrix to_matrix(const dca::Tensor& t) {
  oracle::Matrix m(t.dim(0));
  for (std::size_t r = 0; r < t.dim(0); ++r) m[r].assign(t.row(r).begin(), t.row(r).end());
  return m;
}

inline dca::ProbBatch batch(const oracle::Matrix& probs, std::vector<int> labels) {
  return {to_tensor(probs), std::move(labels)};
}

inline dca::Dataset make_dataset(const oracle::Matrix& x, std::vector<int> y, std::size_t classes) {
  dca::Dataset d;
  d.inputs = to_tensor(x);
  d.labels = std::move(y);
  d.class_count = classes;
  return d;
}

inline oracle::MlpShape shape_of(const dca::ModelSpec& s) {
  return {s.input_dim, s.class_count, s.hidden_width, s.trunks};
}

inline oracle::Matrix random_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  oracle::Matrix m(rows, std::vector<double>(cols));
  for (auto& r : m)
    for (double& v : r) v = nd(rng);
  return m;
}

inline std::vector<int> random_labels(std::mt19937_64& rng, std::size_t n, std::size_t classes) {
  std::uniform_int_distribution<int> d(0, static_cast<int>(classes) - 1);
  std::vector<int> y(n);
  for (int& v : y) v = d(rng);
  return y;
}

// Small random residual-MLP spec with at most `max_params` parameters.
inline dca::ModelSpec random_spec(std::mt19937_64& rng, std::size_t max_params = 500) {
  for (;;) {
    dca::ModelSpec s;
    s.input_dim = 1 + rng() % 4;
    s.class_count = 2 + rng() % 3;
    s.hidden_width = 2 + rng() % 5;
    s.trunks.assign(1 + rng() % 2, 0);
    for (auto& b : s.trunks) b = 1 + rng() % 2;
    if (oracle::mlp_param_count(shape_of(s)) <= max_params) return s;
  }
}

inline std::vector<double> random_params(std::mt19937_64& rng, std::size_t n, double scale = 0.5) {
  std::normal_distribution<double> nd(0.0, scale);
  std::vector<double> p(n);
  for (double& v : p) v = nd(rng);
  return p;
}

// Central differences are only a valid oracle away from ReLU kinks.
inline bool away_from_kinks(const dca::ModelSpec& spec, const std::vector<double>& params, const oracle::Matrix& x,
                            double margin = 1e-3) {
  std::vector<double> pre;
  oracle::mlp_forward(shape_of(spec), params, x, &pre);
  for (double v : pre)
    if (std::abs(v) < margin) return false;
  return true;
}

inline bool bit_equal(std::span<const double> a, std::span<const double> b) {
  return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(), [](double x, double y) {
           return std::bit_cast<std::uint64_t>(x) == std::bit_cast<std::uint64_t>(y);
         });
}

}  // namespace testing_util
