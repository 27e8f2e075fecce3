#include "lmaml/lambda_pattern.hpp"

#include <algorithm>
#include <stdexcept>

namespace lmaml {

LambdaPattern::LambdaPattern(std::vector<bool> bits) : bits_(std::move(bits)) {
  if (bits_.empty()) throw std::invalid_argument("lambda pattern: no blocks");
  if (bits_.size() > 63) throw std::invalid_argument("lambda pattern: at most 63 blocks");
  if (std::none_of(bits_.begin(), bits_.end(), [](bool b) { return b; })) {
    throw std::invalid_argument("lambda pattern: all-zero pattern leaves nothing to adapt");
  }
}

LambdaPattern LambdaPattern::parse(std::string_view literal) {
  std::vector<bool> bits;
  bool expect_digit = true;
  for (char c : literal) {
    if (c == ' ' || c == '{' || c == '}') continue;
    if (expect_digit && (c == '0' || c == '1')) {
      bits.push_back(c == '1');
      expect_digit = false;
    } else if (!expect_digit && c == ',') {
      expect_digit = true;
    } else {
      throw std::invalid_argument("lambda pattern: malformed literal '" + std::string(literal) + "'");
    }
  }
  if (expect_digit) throw std::invalid_argument("lambda pattern: malformed literal '" + std::string(literal) + "'");
  return LambdaPattern(std::move(bits));
}

LambdaPattern LambdaPattern::full(std::size_t blocks) {
  return LambdaPattern(std::vector<bool>(blocks, true));
}

std::size_t LambdaPattern::active_count() const {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), true));
}

std::uint64_t LambdaPattern::value() const {
  std::uint64_t v = 0;
  for (bool b : bits_) v = (v << 1) | (b ? 1u : 0u);
  return v;
}

bool LambdaPattern::subset_of(const LambdaPattern& other) const {
  if (other.size() != size()) return false;
  for (std::size_t i = 0; i < size(); ++i) {
    if (bits_[i] && !other.bits_[i]) return false;
  }
  return true;
}

std::string LambdaPattern::str() const {
  std::string s;
  for (std::size_t i = 0; i < bits_.size(); ++i) {
    if (i) s += ',';
    s += bits_[i] ? '1' : '0';
  }
  return s;
}

std::vector<LambdaPattern> enumerate_patterns(std::size_t blocks) {
  if (blocks < 1 || blocks > 20) throw std::invalid_argument("enumerate_patterns: blocks must be in [1, 20]");
  std::vector<LambdaPattern> out;
  const std::uint64_t count = (std::uint64_t{1} << blocks) - 1;
  out.reserve(count);
  for (std::uint64_t v = 1; v <= count; ++v) {
    std::vector<bool> bits(blocks);
    for (std::size_t i = 0; i < blocks; ++i) bits[i] = (v >> (blocks - 1 - i)) & 1u;
    out.emplace_back(std::move(bits));
  }
  return out;
}

std::vector<LambdaPattern> trivial_patterns(std::size_t blocks) {
  std::vector<LambdaPattern> out;
  for (std::size_t i = 0; i < blocks; ++i) {
    std::vector<bool> bits(blocks, false);
    bits[i] = true;
    out.emplace_back(std::move(bits));
  }
  return out;
}

namespace {
bool contains(const std::vector<std::size_t>& v, std::size_t x) {
  return std::find(v.begin(), v.end(), x) != v.end();
}
}  // namespace

bool BackpropPlan::updates(std::size_t layer) const { return contains(update_layers, layer); }
bool BackpropPlan::passes_gradient(std::size_t layer) const { return contains(grad_flow_layers, layer); }
bool BackpropPlan::skips(std::size_t layer) const { return contains(skip_layers, layer); }

BackpropPlan plan(const LambdaPattern& pattern, std::size_t blocks) {
  if (pattern.size() != blocks) {
    throw std::invalid_argument("plan: pattern " + pattern.str() + " has " + std::to_string(pattern.size()) +
                                " bits, model has " + std::to_string(blocks) + " blocks");
  }
  BackpropPlan p;
  std::size_t first = 0;
  for (std::size_t l = 1; l <= blocks; ++l) {
    if (pattern.active(l)) {
      p.update_layers.push_back(l);
      if (!first) first = l;
    }
  }
  for (std::size_t l = 1; l <= blocks; ++l) {
    if (l < first) p.skip_layers.push_back(l);
    if (l > first) p.grad_flow_layers.push_back(l);
  }
  return p;
}

template <typename T>
WeightSet<T> masked_step(const WeightSet<T>& weights, const std::vector<std::optional<Tensor<T>>>& grads,
                         const LambdaPattern& pattern, T alpha) {
  if (grads.size() != weights.size()) {
    throw ShapeError("masked_step: " + std::to_string(grads.size()) + " gradients for " +
                     std::to_string(weights.size()) + " parameters");
  }
  std::vector<Tensor<T>> next;
  next.reserve(weights.size());
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const auto& p = weights.params[i];
    if (p.layer < 1 || p.layer > pattern.size()) {
      throw ShapeError("masked_step: parameter " + p.name + " belongs to block " + std::to_string(p.layer) +
                       " outside pattern " + pattern.str());
    }
    if (!pattern.active(p.layer)) {
      next.push_back(p.value);
      continue;
    }
    if (!grads[i]) throw ShapeError("masked_step: missing gradient for active parameter " + p.name);
    if (grads[i]->shape() != p.value.shape()) {
      throw ShapeError("masked_step: gradient for " + p.name + " has shape " + shape_str(grads[i]->shape()) +
                       ", expected " + shape_str(p.value.shape()));
    }
    next.push_back(sub(p.value, scale(*grads[i], alpha)));
  }
  return weights.with_values(std::move(next));
}

template WeightSet<double> masked_step(const WeightSet<double>&, const std::vector<std::optional<Tensor<double>>>&,
                                       const LambdaPattern&, double);
template WeightSet<float> masked_step(const WeightSet<float>&, const std::vector<std::optional<Tensor<float>>>&,
                                      const LambdaPattern&, float);

}  // namespace lmaml
