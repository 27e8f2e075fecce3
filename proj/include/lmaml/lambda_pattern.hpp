#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lmaml/nn.hpp"

namespace lmaml {

/// Per-block update mask. Bit 1 is the block nearest the input. The all-zero
/// mask is not representable.
class LambdaPattern {
 public:
  explicit LambdaPattern(std::vector<bool> bits);

  /// Parses the literal form "1,0,1,1,1".
  static LambdaPattern parse(std::string_view literal);
  static LambdaPattern full(std::size_t blocks);

  std::size_t size() const { return bits_.size(); }
  /// 1-based block index.
  bool active(std::size_t layer) const { return bits_.at(layer - 1); }
  std::size_t active_count() const;
  bool is_full() const { return active_count() == size(); }
  /// Bits read as a binary number, bit 1 most significant.
  std::uint64_t value() const;
  /// Every active block of this pattern is active in `other`.
  bool subset_of(const LambdaPattern& other) const;
  const std::vector<bool>& bits() const { return bits_; }

  std::string str() const;

  bool operator==(const LambdaPattern&) const = default;
  auto operator<=>(const LambdaPattern& other) const { return str() <=> other.str(); }

 private:
  std::vector<bool> bits_;
};

/// All 2^B - 1 non-zero patterns in ascending binary value.
std::vector<LambdaPattern> enumerate_patterns(std::size_t blocks);
/// The B single-bit patterns, block 1 first.
std::vector<LambdaPattern> trivial_patterns(std::size_t blocks);

/// Which blocks do what during the backward pass of one adaptation step.
struct BackpropPlan {
  std::vector<std::size_t> update_layers;     // weight gradients and update
  std::vector<std::size_t> grad_flow_layers;  // input gradients only needed to reach a lower active block
  std::vector<std::size_t> skip_layers;       // below the first active block: nothing

  bool updates(std::size_t layer) const;
  bool passes_gradient(std::size_t layer) const;
  bool skips(std::size_t layer) const;
};

BackpropPlan plan(const LambdaPattern& pattern, std::size_t blocks);

/// theta' = theta - alpha * g for parameters of active blocks; parameters of
/// frozen blocks are returned unchanged (same tensor). `grads` is aligned with
/// `weights`; entries of frozen blocks may be absent.
template <typename T>
WeightSet<T> masked_step(const WeightSet<T>& weights, const std::vector<std::optional<Tensor<T>>>& grads,
                         const LambdaPattern& pattern, T alpha);

}  // namespace lmaml
