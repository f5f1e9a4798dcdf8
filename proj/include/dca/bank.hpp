#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "dca/error.hpp"
#include "dca/model.hpp"
#include "dca/random.hpp"

namespace dca {

// Kaiming-uniform weights (bound sqrt(6 / fan_in)) and zero biases for one
// full parameterization of the model.
inline std::vector<double> init_parameters(const ModelLayout& layout, Rng& rng) {
  std::vector<double> params(layout.slot_count, 0.0);
  for (const auto& l : layout.layers) {
    const double bound = std::sqrt(6.0 / static_cast<double>(l.in));
    for (std::size_t s = l.weight_offset; s < l.bias_offset(); ++s) params[s] = uniform(rng, -bound, bound);
  }
  return params;
}

inline std::vector<double> init_parameters(const ModelLayout& layout, std::uint64_t seed) {
  Rng rng = make_rng(seed, 0);
  return init_parameters(layout, rng);
}

// One instance index per component.
struct Proposal {
  std::vector<std::uint32_t> indices;
  friend bool operator==(const Proposal&, const Proposal&) = default;
};

// n instances of every component of a partitioned model, with per-slot
// momentum buffers that live beside the weights.
class ParameterBank {
 public:
  using Instances = std::vector<std::vector<std::vector<double>>>;  // [component][instance][local slot]

  ParameterBank(ModelLayout layout, Granularity g, Instances instances, std::uint64_t seed = 0)
      : layout_(std::move(layout)),
        partition_(dca::partition(layout_, g)),
        instances_(std::move(instances)),
        seed_(seed) {
    if (instances_.size() != partition_.component_count())
      throw DimensionError("bank has " + std::to_string(instances_.size()) + " components, partition has " +
                           std::to_string(partition_.component_count()));
    n_ = instances_.empty() ? 0 : instances_.front().size();
    if (n_ == 0) throw ConfigError("bank needs at least one instance");
    for (std::size_t c = 0; c < instances_.size(); ++c) {
      if (instances_[c].size() != n_) throw DimensionError("ragged instance count in component " + std::to_string(c));
      for (const auto& inst : instances_[c])
        if (inst.size() != partition_.components[c].size())
          throw DimensionError("component " + std::to_string(c) + " instance has " + std::to_string(inst.size()) +
                               " slots, expected " + std::to_string(partition_.components[c].size()));
    }
    owner_.assign(layout_.slot_count, 0);
    local_.assign(layout_.slot_count, 0);
    for (std::size_t c = 0; c < partition_.component_count(); ++c) {
      std::size_t k = 0;
      for (const auto& r : partition_.components[c].ranges)
        for (std::size_t s = r.begin; s < r.end; ++s) {
          owner_[s] = static_cast<std::uint32_t>(c);
          local_[s] = k++;
        }
    }
    momentum_ = instances_;
    for (auto& comp : momentum_)
      for (auto& inst : comp) std::fill(inst.begin(), inst.end(), 0.0);
  }

  const ModelLayout& layout() const noexcept { return layout_; }
  const Partition& partition() const noexcept { return partition_; }
  Granularity granularity() const noexcept { return partition_.granularity; }
  std::size_t instance_count() const noexcept { return n_; }
  std::size_t component_count() const noexcept { return instances_.size(); }
  std::size_t slot_count() const noexcept { return layout_.slot_count; }
  std::uint64_t seed() const noexcept { return seed_; }

  std::span<double> instance(std::size_t c, std::size_t i) { return instances_.at(c).at(i); }
  std::span<const double> instance(std::size_t c, std::size_t i) const { return instances_.at(c).at(i); }
  std::span<double> momentum(std::size_t c, std::size_t i) { return momentum_.at(c).at(i); }
  std::span<const double> momentum(std::size_t c, std::size_t i) const { return momentum_.at(c).at(i); }
  const Instances& instances() const noexcept { return instances_; }

  std::uint32_t owner(std::size_t slot) const { return owner_[slot]; }
  std::size_t local(std::size_t slot) const { return local_[slot]; }

  void check(const Proposal& p) const {
    if (p.indices.size() != component_count())
      throw ProposalError("proposal has " + std::to_string(p.indices.size()) + " indices, bank has " +
                          std::to_string(component_count()) + " components");
    for (std::size_t c = 0; c < p.indices.size(); ++c)
      if (p.indices[c] >= n_)
        throw ProposalError("proposal index " + std::to_string(p.indices[c]) + " for component " +
                            std::to_string(c) + " outside [0, " + std::to_string(n_) + ")");
  }

 private:
  ModelLayout layout_;
  Partition partition_;
  Instances instances_;
  Instances momentum_;
  std::vector<std::uint32_t> owner_;
  std::vector<std::size_t> local_;
  std::size_t n_ = 0;
  std::uint64_t seed_ = 0;
};

// Splits a flat parameter vector into per-component local arrays.
inline std::vector<std::vector<double>> split_by_component(const Partition& p, std::span<const double> flat) {
  std::vector<std::vector<double>> out(p.component_count());
  for (std::size_t c = 0; c < p.component_count(); ++c) {
    out[c].reserve(p.components[c].size());
    for (const auto& r : p.components[c].ranges)
      out[c].insert(out[c].end(), flat.begin() + static_cast<std::ptrdiff_t>(r.begin),
                    flat.begin() + static_cast<std::ptrdiff_t>(r.end));
  }
  return out;
}

// Instance i of every component comes from the full-model initialization drawn
// from substream i of the seed, so instances are mutually independent.
inline ParameterBank init_bank(const ModelSpec& spec, Granularity g, std::size_t n, std::uint64_t seed) {
  if (n < 2) throw ConfigError("instance count n must be >= 2 (got " + std::to_string(n) + ")");
  if (n > std::numeric_limits<std::uint16_t>::max()) throw ConfigError("instance count n exceeds 65535");
  ModelLayout layout = build_layout(spec);
  const Partition p = partition(layout, g);
  ParameterBank::Instances inst(p.component_count(), std::vector<std::vector<double>>(n));
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = make_rng(seed, i);
    auto parts = split_by_component(p, init_parameters(layout, rng));
    for (std::size_t c = 0; c < parts.size(); ++c) inst[c][i] = std::move(parts[c]);
  }
  return ParameterBank(std::move(layout), g, std::move(inst), seed);
}

inline Proposal sample_proposal(const ParameterBank& bank, Rng& rng) {
  Proposal p;
  p.indices.resize(bank.component_count());
  for (auto& idx : p.indices) idx = static_cast<std::uint32_t>(uniform_index(rng, bank.instance_count()));
  return p;
}

// Full base-model parameterization: slot s read from instance proposal[owner(s)].
inline std::vector<double> assemble(const ParameterBank& bank, const Proposal& proposal) {
  bank.check(proposal);
  std::vector<double> flat(bank.slot_count());
  const auto& comps = bank.partition().components;
  for (std::size_t c = 0; c < comps.size(); ++c) {
    auto src = bank.instance(c, proposal.indices[c]);
    std::size_t k = 0;
    for (const auto& r : comps[c].ranges)
      for (std::size_t s = r.begin; s < r.end; ++s) flat[s] = src[k++];
  }
  return flat;
}

// Per-instance gradient sums, shaped like the bank.
class GradientAccumulator {
 public:
  explicit GradientAccumulator(const ParameterBank& bank) : sums_(bank.instances()) {
    touched_.assign(bank.component_count(), std::vector<bool>(bank.instance_count(), false));
    reset();
  }

  void reset() {
    for (auto& comp : sums_)
      for (auto& inst : comp) std::fill(inst.begin(), inst.end(), 0.0);
    for (auto& t : touched_) std::fill(t.begin(), t.end(), false);
  }

  std::span<double> sum(std::size_t c, std::size_t i) { return sums_[c][i]; }
  std::span<const double> sum(std::size_t c, std::size_t i) const { return sums_[c][i]; }
  bool touched(std::size_t c, std::size_t i) const { return touched_[c][i]; }
  void mark(std::size_t c, std::size_t i) { touched_[c][i] = true; }

 private:
  ParameterBank::Instances sums_;
  std::vector<std::vector<bool>> touched_;
};

inline void scatter_gradients(const ParameterBank& bank, const Proposal& proposal, std::span<const double> grads,
                              GradientAccumulator& acc) {
  if (grads.size() != bank.slot_count())
    throw DimensionError("gradient view has " + std::to_string(grads.size()) + " slots, bank has " +
                         std::to_string(bank.slot_count()));
  bank.check(proposal);
  const auto& comps = bank.partition().components;
  for (std::size_t c = 0; c < comps.size(); ++c) {
    const std::size_t i = proposal.indices[c];
    auto dst = acc.sum(c, i);
    acc.mark(c, i);
    std::size_t k = 0;
    for (const auto& r : comps[c].ranges)
      for (std::size_t s = r.begin; s < r.end; ++s) dst[k++] += grads[s];
  }
}

struct ProposalCount {
  std::uint64_t value = 0;  // meaningful only when !overflow
  bool overflow = false;
};

inline ProposalCount count_proposals(std::uint64_t n, std::uint64_t components) {
  ProposalCount out{1, false};
  for (std::uint64_t c = 0; c < components; ++c) {
    if (n != 0 && out.value > std::numeric_limits<std::uint64_t>::max() / n) return {0, true};
    out.value *= n;
  }
  return out;
}

inline ProposalCount count_proposals(const ParameterBank& bank) {
  return count_proposals(bank.instance_count(), bank.component_count());
}

// Every distinct proposal of a modelwise bank, in instance order.
inline std::vector<Proposal> enumerate_modelwise(const ParameterBank& bank) {
  if (bank.component_count() != 1) throw ConfigError("member enumeration needs a single-component bank");
  std::vector<Proposal> out;
  for (std::uint32_t i = 0; i < bank.instance_count(); ++i) out.push_back({{i}});
  return out;
}

}  // namespace dca
