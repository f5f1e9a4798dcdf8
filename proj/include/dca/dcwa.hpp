#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

#include "dca/bank.hpp"

namespace dca {

struct AveragedWeights {
  std::vector<double> params;
  // Set for block/trunk/model granularity, where instances need not share a
  // neuron ordering and the average usually degrades.
  bool coarse_grain_warning = false;
};

// Element-wise mean of each component's instances, as one base-model
// parameterization. Per slot the n values are summed in ascending order (in
// extended precision), so the result does not depend on instance order; equal
// values are returned as-is.
inline AveragedWeights average_weights(const ParameterBank& bank) {
  AveragedWeights out{std::vector<double>(bank.slot_count()), !is_fine_grain(bank.granularity())};
  const std::size_t n = bank.instance_count();
  const auto& comps = bank.partition().components;
  std::vector<double> column(n);
  for (std::size_t c = 0; c < comps.size(); ++c) {
    std::size_t k = 0;
    for (const auto& r : comps[c].ranges)
      for (std::size_t s = r.begin; s < r.end; ++s, ++k) {
        for (std::size_t i = 0; i < n; ++i) column[i] = bank.instance(c, i)[k];
        std::sort(column.begin(), column.end());
        if (column.front() == column.back()) {
          out.params[s] = column.front();
          continue;
        }
        long double sum = 0.0L;
        for (double v : column) sum += v;
        out.params[s] = static_cast<double>(sum / static_cast<long double>(n));
      }
  }
  return out;
}

}  // namespace dca
