#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

#include "dca/data.hpp"
#include "dca/metrics.hpp"
#include "dca/model.hpp"

namespace dca {

// Logits for every row of `data`, evaluated in fixed-size chunks.
inline Tensor predict_logits(const ModelLayout& layout, std::span<const double> params, const Dataset& data,
                             std::size_t chunk = 1024) {
  Network net = build_network(layout);
  Tensor out(Shape{data.size(), layout.spec.class_count});
  std::vector<std::size_t> rows;
  for (std::size_t first = 0; first < data.size(); first += chunk) {
    const std::size_t count = std::min(chunk, data.size() - first);
    rows.resize(count);
    std::iota(rows.begin(), rows.end(), first);
    const Tensor& logits = net.graph.forward(params, data.batch(rows));
    std::copy(logits.data().begin(), logits.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(first * logits.dim(1)));
  }
  return out;
}

inline ProbBatch predict(const ModelLayout& layout, std::span<const double> params, const Dataset& data) {
  return {softmax(predict_logits(layout, params, data)), data.labels};
}

}  // namespace dca
