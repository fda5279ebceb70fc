#pragma once

#include <string>
#include <variant>
#include <vector>

#include "clipforge/attention.hpp"
#include "clipforge/layers.hpp"

namespace clipforge {

// Closed set of layer kinds with value semantics; std::visit dispatch keeps
// the zoo enumerable for the gradient checker and the FLOPs reports without a
// virtual hierarchy.
using AnyLayer = std::variant<Conv2d, Dense, GroupNorm, GruCell, GlobalAvgPool, MaxPool, Softmax,
                              Sigmoid, Relu, ChannelAttention, SpatialAttention, Eca,
                              ShuffleAttention>;

inline LayerKind layer_kind(const AnyLayer& layer) {
  return std::visit([](const auto& l) { return l.kind(); }, layer);
}

inline Shape layer_out_shape(const AnyLayer& layer, const Shape& in) {
  return std::visit([&](const auto& l) { return l.out_shape(in); }, layer);
}

inline Tensor layer_forward(const AnyLayer& layer, const Tensor& x) {
  return std::visit([&](const auto& l) { return l.forward(x); }, layer);
}

inline LayerGrads layer_backward(const AnyLayer& layer, const Tensor& x, const Tensor& g) {
  return std::visit([&](const auto& l) { return l.backward(x, g); }, layer);
}

inline std::int64_t layer_flops(const AnyLayer& layer, const Shape& in) {
  return std::visit([&](const auto& l) { return l.flops(in); }, layer);
}

inline std::vector<ParamRef> layer_params(AnyLayer& layer) {
  return std::visit([](auto& l) { return l.params(); }, layer);
}

// A plain layer pipeline. forward_all returns every intermediate activation
// (inputs[0] is the network input, inputs[i+1] the output of layer i) so the
// backward chain can reuse them.
struct Sequential {
  std::vector<AnyLayer> layers;

  Tensor forward(const Tensor& x) const {
    Tensor cur = x;
    for (const AnyLayer& l : layers) cur = layer_forward(l, cur);
    return cur;
  }

  std::vector<Tensor> forward_all(const Tensor& x) const {
    std::vector<Tensor> acts;
    acts.reserve(layers.size() + 1);
    acts.push_back(x);
    for (const AnyLayer& l : layers) acts.push_back(layer_forward(l, acts.back()));
    return acts;
  }

  // Chains backward through every layer. `acts` must come from forward_all on
  // the same input. Parameter gradients land in `param_grads` (one vector of
  // tensors per layer, aligned with each layer's params() order); the return
  // value is the gradient w.r.t. the network input.
  Tensor backward(const std::vector<Tensor>& acts, const Tensor& upstream,
                  std::vector<std::vector<Tensor>>* param_grads = nullptr) const {
    require(acts.size() == layers.size() + 1, "Sequential::backward: activations mismatch");
    if (param_grads != nullptr) param_grads->assign(layers.size(), {});
    Tensor g = upstream;
    for (int i = static_cast<int>(layers.size()) - 1; i >= 0; --i) {
      LayerGrads lg = layer_backward(layers[i], acts[static_cast<std::size_t>(i)], g);
      if (param_grads != nullptr) (*param_grads)[static_cast<std::size_t>(i)] = std::move(lg.params);
      g = std::move(lg.input);
    }
    return g;
  }

  Shape out_shape(const Shape& in) const {
    Shape cur = in;
    for (const AnyLayer& l : layers) cur = layer_out_shape(l, cur);
    return cur;
  }

  std::int64_t flops(const Shape& in) const {
    Shape cur = in;
    std::int64_t total = 0;
    for (const AnyLayer& l : layers) {
      total += layer_flops(l, cur);
      cur = layer_out_shape(l, cur);
    }
    return total;
  }

  // Named parameter refs with layer index prefixes: "3.weight".
  std::vector<ParamRef> params() {
    std::vector<ParamRef> out;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      for (ParamRef& p : layer_params(layers[i])) {
        out.push_back({std::to_string(i) + "." + p.name, p.tensor});
      }
    }
    return out;
  }
};

}  // namespace clipforge
