#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dca/error.hpp"
#include "dca/graph.hpp"

namespace dca {

// Residual MLP: stem -> trunks -> head. A trunk is a plain dense layer
// followed by residual blocks; a block is relu(h + dense(relu(dense(h)))).
struct ModelSpec {
  std::size_t input_dim = 2;
  std::size_t class_count = 4;
  std::size_t hidden_width = 32;
  // Residual block count of each trunk.
  std::vector<std::size_t> trunks{2, 2};

  void validate() const {
    if (input_dim == 0) throw ConfigError("model.input_dim must be positive");
    if (hidden_width == 0) throw ConfigError("model.hidden_width must be positive");
    if (class_count < 2) throw ConfigError("model.class_count must be >= 2");
    if (trunks.empty()) throw ConfigError("model needs at least one trunk");
    for (std::size_t blocks : trunks)
      if (blocks == 0) throw ConfigError("every trunk needs at least one residual block");
  }

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

enum class Granularity : std::uint8_t { neuronwise = 0, layerwise = 1, blockwise = 2, trunkwise = 3, modelwise = 4 };

inline constexpr Granularity kAllGranularities[] = {Granularity::neuronwise, Granularity::layerwise,
                                                    Granularity::blockwise, Granularity::trunkwise,
                                                    Granularity::modelwise};

inline bool is_fine_grain(Granularity g) noexcept {
  return g == Granularity::neuronwise || g == Granularity::layerwise;
}

inline std::string_view to_string(Granularity g) noexcept {
  switch (g) {
    case Granularity::neuronwise: return "neuronwise";
    case Granularity::layerwise: return "layerwise";
    case Granularity::blockwise: return "blockwise";
    case Granularity::trunkwise: return "trunkwise";
    case Granularity::modelwise: return "modelwise";
  }
  return "?";
}

inline Granularity parse_granularity(std::string_view s) {
  for (Granularity g : kAllGranularities)
    if (s == to_string(g)) return g;
  // Short forms.
  if (s == "neuron") return Granularity::neuronwise;
  if (s == "layer") return Granularity::layerwise;
  if (s == "block") return Granularity::blockwise;
  if (s == "trunk") return Granularity::trunkwise;
  if (s == "model") return Granularity::modelwise;
  throw ConfigError("unknown granularity '" + std::string(s) + "'");
}

enum class LayerRole { stem, trunk_entry, block_first, block_second, head };

struct DenseLayer {
  std::size_t in = 0;
  std::size_t out = 0;
  // Weights are stored [out, in] row-major, immediately followed by the bias.
  std::size_t weight_offset = 0;
  LayerRole role = LayerRole::stem;
  std::size_t trunk = 0;
  std::size_t block = 0;

  std::size_t bias_offset() const noexcept { return weight_offset + in * out; }
  std::size_t end() const noexcept { return bias_offset() + out; }
  std::size_t parameter_count() const noexcept { return in * out + out; }
};

struct ModelLayout {
  ModelSpec spec;
  std::vector<DenseLayer> layers;
  std::size_t slot_count = 0;

  std::size_t layer_count() const noexcept { return layers.size(); }
};

inline ModelLayout build_layout(const ModelSpec& spec) {
  spec.validate();
  ModelLayout layout{spec, {}, 0};
  auto add = [&](std::size_t in, std::size_t out, LayerRole role, std::size_t trunk, std::size_t block) {
    layout.layers.push_back({in, out, layout.slot_count, role, trunk, block});
    layout.slot_count = layout.layers.back().end();
  };
  const std::size_t w = spec.hidden_width;
  add(spec.input_dim, w, LayerRole::stem, 0, 0);
  for (std::size_t t = 0; t < spec.trunks.size(); ++t) {
    add(w, w, LayerRole::trunk_entry, t, 0);
    for (std::size_t b = 0; b < spec.trunks[t]; ++b) {
      add(w, w, LayerRole::block_first, t, b);
      add(w, w, LayerRole::block_second, t, b);
    }
  }
  add(w, spec.class_count, LayerRole::head, 0, 0);
  return layout;
}

enum class LossKind { none, nll, cel };

// A model graph plus the ids callers need to feed and read it. Inputs, in
// declaration order: features [B, D]; labels [B] (nll/cel); reference [B, C] (cel).
struct Network {
  Graph graph;
  NodeId features = 0;
  NodeId logits = 0;
  NodeId log_probs = 0;
  std::optional<NodeId> labels;
  std::optional<NodeId> reference;
  std::optional<NodeId> loss;
};

inline Network build_network(const ModelLayout& layout, LossKind loss = LossKind::none,
                             double kl_weight = 1.0) {
  Network net;
  Graph& g = net.graph;
  net.features = g.input(Shape{layout.spec.input_dim});
  auto dense = [&](NodeId x, const DenseLayer& l) {
    const NodeId w = g.parameter(l.weight_offset, Shape{l.out, l.in});
    const NodeId b = g.parameter(l.bias_offset(), Shape{l.out});
    return g.bias_add(g.matmul(x, w), b);
  };
  NodeId h = net.features;
  NodeId block_input = 0;
  NodeId block_hidden = 0;
  for (const DenseLayer& l : layout.layers) {
    switch (l.role) {
      case LayerRole::stem:
      case LayerRole::trunk_entry:
        h = g.relu(dense(h, l));
        break;
      case LayerRole::block_first:
        block_input = h;
        block_hidden = g.relu(dense(h, l));
        break;
      case LayerRole::block_second:
        h = g.relu(g.add(block_input, dense(block_hidden, l)));
        break;
      case LayerRole::head:
        h = dense(h, l);
        break;
    }
  }
  net.logits = h;
  net.log_probs = g.log_softmax(net.logits);
  g.set_parameter_count(layout.slot_count);
  if (loss == LossKind::none) {
    g.set_output(net.logits);
    return net;
  }
  net.labels = g.input(Shape{});
  NodeId total = g.nll(net.log_probs, *net.labels);
  if (loss == LossKind::cel) {
    net.reference = g.input(Shape{layout.spec.class_count});
    total = g.add(total, g.kl(net.log_probs, *net.reference, kl_weight));
  }
  net.loss = total;
  g.set_output(total);
  return net;
}

// Half-open range of flat parameter slots.
struct SlotRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const noexcept { return end - begin; }
};

struct Component {
  std::vector<SlotRange> ranges;

  std::size_t size() const noexcept {
    std::size_t n = 0;
    for (const auto& r : ranges) n += r.size();
    return n;
  }
};

struct Partition {
  Granularity granularity = Granularity::modelwise;
  std::vector<Component> components;
  std::size_t slot_count = 0;

  std::size_t component_count() const noexcept { return components.size(); }

  // Component index owning each slot.
  std::vector<std::uint32_t> owner_map() const {
    std::vector<std::uint32_t> owner(slot_count, 0);
    for (std::size_t c = 0; c < components.size(); ++c)
      for (const auto& r : components[c].ranges)
        for (std::size_t s = r.begin; s < r.end; ++s) owner[s] = static_cast<std::uint32_t>(c);
    return owner;
  }
};

inline Partition partition(const ModelLayout& layout, Granularity g) {
  Partition p{g, {}, layout.slot_count};
  const auto& layers = layout.layers;
  switch (g) {
    case Granularity::neuronwise:
      for (const auto& l : layers)
        for (std::size_t o = 0; o < l.out; ++o)
          p.components.push_back({{{l.weight_offset + o * l.in, l.weight_offset + (o + 1) * l.in},
                                   {l.bias_offset() + o, l.bias_offset() + o + 1}}});
      break;
    case Granularity::layerwise:
      for (const auto& l : layers) p.components.push_back({{{l.weight_offset, l.end()}}});
      break;
    case Granularity::blockwise:
      for (const auto& l : layers) {
        if (l.role == LayerRole::block_second)
          p.components.back().ranges.back().end = l.end();
        else
          p.components.push_back({{{l.weight_offset, l.end()}}});
      }
      break;
    case Granularity::trunkwise:
      for (const auto& l : layers) {
        const bool starts = l.role == LayerRole::stem || l.role == LayerRole::trunk_entry ||
                            l.role == LayerRole::head;
        if (starts)
          p.components.push_back({{{l.weight_offset, l.end()}}});
        else
          p.components.back().ranges.back().end = l.end();
      }
      break;
    case Granularity::modelwise:
      p.components.push_back({{{0, layout.slot_count}}});
      break;
  }
  return p;
}

inline Partition partition(const ModelSpec& spec, Granularity g) { return partition(build_layout(spec), g); }

}  // namespace dca
