#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lmaml/tensor.hpp"

namespace lmaml {

enum class LayerKind { ConvBlock, Linear };

/// One adaptable block. A conv block is 3x3 conv (pad 1) -> batch norm -> ReLU
/// -> 2x2 max pool; its parameters are kernel, bias, bn_gamma, bn_beta.
struct LayerSpec {
  LayerKind kind = LayerKind::ConvBlock;
  std::size_t in = 0;   // channels or features
  std::size_t out = 0;  // channels or features

  std::size_t param_count() const;
  bool operator==(const LayerSpec&) const = default;
};

struct ImageShape {
  std::size_t channels = 3;
  std::size_t height = 32;
  std::size_t width = 32;

  Shape batch(std::size_t n) const { return {n, channels, height, width}; }
  std::size_t numel() const { return channels * height * width; }
  bool operator==(const ImageShape&) const = default;
};

struct Architecture {
  std::vector<LayerSpec> layers;
  ImageShape input;
  std::size_t filters = 32;
  std::size_t n_way = 5;

  std::size_t blocks() const { return layers.size(); }
  std::size_t param_count() const;
  std::size_t feature_dim() const { return layers.back().in; }
  bool operator==(const Architecture&) const = default;
};

enum class Mode { Train, Eval };

inline constexpr double kBatchNormEps = 1e-5;

template <typename T>
struct Param {
  std::string name;
  std::size_t layer = 0;  // 1-based block index
  Tensor<T> value;
};

/// Named parameter tensors ordered by block index.
template <typename T>
struct WeightSet {
  std::vector<Param<T>> params;

  std::size_t size() const { return params.size(); }
  std::size_t param_count() const;
  const Param<T>* find(std::string_view name) const;
  std::vector<Tensor<T>> values() const;
  /// Same names and layers, new tensors (aligned with params).
  WeightSet with_values(std::vector<Tensor<T>> values) const;
  WeightSet detached() const;
  bool identical(const WeightSet& other) const;

  template <typename U>
  WeightSet<U> cast() const {
    WeightSet<U> out;
    for (const auto& p : params) out.params.push_back({p.name, p.layer, p.value.template cast<U>()});
    return out;
  }
};

struct Cnn4Options {
  std::size_t filters = 32;
  std::size_t n_way = 5;
  ImageShape input{};
  /// Forces the linear layer's input width instead of deriving it from the
  /// flattened feature map.
  std::optional<std::size_t> feature_dim;
  std::uint64_t seed = 0;
  double init_std = 0.02;
};

Architecture cnn4_architecture(const Cnn4Options& options);
WeightSet<double> init_weights(const Architecture& arch, std::uint64_t seed, double init_std = 0.02);

struct Cnn4 {
  Architecture arch;
  WeightSet<double> weights;
};

Cnn4 build_cnn4(const Cnn4Options& options);

/// Functional forward pass: logits of shape (batch, n_way). Batch norm always
/// uses the statistics of the current batch, in both modes.
template <typename T>
Tensor<T> forward(const Architecture& arch, const WeightSet<T>& weights, const Tensor<T>& x,
                  Mode mode = Mode::Train);

using Labels = std::vector<std::int32_t>;

/// Mean over the batch of -log softmax(logits)[label].
template <typename T>
Tensor<T> cross_entropy(std::span<const std::int32_t> labels, const Tensor<T>& logits);

/// Fraction of rows whose argmax (lowest index on ties) equals the label.
template <typename T>
double accuracy(std::span<const std::int32_t> labels, const Tensor<T>& logits);

}  // namespace lmaml
