#include "lmaml/nn.hpp"

#include <random>

namespace lmaml {

std::size_t LayerSpec::param_count() const {
  if (kind == LayerKind::Linear) return in * out + out;
  return 9 * in * out + out + 2 * out;
}

std::size_t Architecture::param_count() const {
  std::size_t total = 0;
  for (const auto& l : layers) total += l.param_count();
  return total;
}

template <typename T>
std::size_t WeightSet<T>::param_count() const {
  std::size_t total = 0;
  for (const auto& p : params) total += p.value.numel();
  return total;
}

template <typename T>
const Param<T>* WeightSet<T>::find(std::string_view name) const {
  for (const auto& p : params) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

template <typename T>
std::vector<Tensor<T>> WeightSet<T>::values() const {
  std::vector<Tensor<T>> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p.value);
  return out;
}

template <typename T>
WeightSet<T> WeightSet<T>::with_values(std::vector<Tensor<T>> values) const {
  if (values.size() != params.size()) {
    throw ShapeError("weight set: expected " + std::to_string(params.size()) + " tensors, got " +
                     std::to_string(values.size()));
  }
  WeightSet out;
  out.params.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (values[i].shape() != params[i].value.shape()) {
      throw ShapeError("weight set: " + params[i].name + " expects " +
                       shape_str(params[i].value.shape()) + ", got " + shape_str(values[i].shape()));
    }
    out.params.push_back({params[i].name, params[i].layer, std::move(values[i])});
  }
  return out;
}

template <typename T>
WeightSet<T> WeightSet<T>::detached() const {
  WeightSet out = *this;
  for (auto& p : out.params) p.value = p.value.detach();
  return out;
}

template <typename T>
bool WeightSet<T>::identical(const WeightSet& other) const {
  if (params.size() != other.params.size()) return false;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& a = params[i];
    const auto& b = other.params[i];
    if (a.name != b.name || a.layer != b.layer || !a.value.same_values(b.value)) return false;
  }
  return true;
}

Architecture cnn4_architecture(const Cnn4Options& o) {
  if (o.filters < 1) throw std::invalid_argument("cnn4: filters must be >= 1");
  if (o.n_way < 2) throw std::invalid_argument("cnn4: n_way must be >= 2");
  if (o.input.channels < 1) throw std::invalid_argument("cnn4: input needs at least one channel");
  if ((o.input.height >> 4) == 0 || (o.input.width >> 4) == 0) {
    throw ShapeError("cnn4: input " + std::to_string(o.input.height) + "x" +
                     std::to_string(o.input.width) + " does not survive four 2x2 pools");
  }
  Architecture arch;
  arch.input = o.input;
  arch.filters = o.filters;
  arch.n_way = o.n_way;
  std::size_t in = o.input.channels;
  for (int b = 0; b < 4; ++b) {
    arch.layers.push_back({LayerKind::ConvBlock, in, o.filters});
    in = o.filters;
  }
  const std::size_t derived = o.filters * (o.input.height >> 4) * (o.input.width >> 4);
  arch.layers.push_back({LayerKind::Linear, o.feature_dim.value_or(derived), o.n_way});
  return arch;
}

namespace {

Tensor<double> truncated_normal(const Shape& shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> values(shape_numel(shape));
  for (auto& v : values) {
    double z = normal(rng);
    while (std::abs(z) > 2.0) z = normal(rng);
    v = z * stddev;
  }
  return Tensor<double>(shape, std::move(values));
}

}  // namespace

WeightSet<double> init_weights(const Architecture& arch, std::uint64_t seed, double init_std) {
  std::mt19937_64 rng(seed);
  WeightSet<double> ws;
  std::size_t conv_index = 0;
  for (std::size_t l = 0; l < arch.layers.size(); ++l) {
    const auto& spec = arch.layers[l];
    const std::size_t layer = l + 1;
    if (spec.kind == LayerKind::ConvBlock) {
      const std::string prefix = "conv" + std::to_string(++conv_index) + ".";
      ws.params.push_back({prefix + "kernel", layer,
                           truncated_normal({spec.out, spec.in, 3, 3}, init_std, rng)});
      ws.params.push_back({prefix + "bias", layer, Tensor<double>::zeros({spec.out})});
      ws.params.push_back({prefix + "bn_gamma", layer, Tensor<double>::filled({spec.out}, 1.0)});
      ws.params.push_back({prefix + "bn_beta", layer, Tensor<double>::zeros({spec.out})});
    } else {
      ws.params.push_back({"linear.weight", layer,
                           truncated_normal({spec.out, spec.in}, init_std, rng)});
      ws.params.push_back({"linear.bias", layer, Tensor<double>::zeros({spec.out})});
    }
  }
  return ws;
}

Cnn4 build_cnn4(const Cnn4Options& options) {
  Cnn4 net;
  net.arch = cnn4_architecture(options);
  net.weights = init_weights(net.arch, options.seed, options.init_std);
  return net;
}

template <typename T>
Tensor<T> forward(const Architecture& arch, const WeightSet<T>& weights, const Tensor<T>& x,
                  Mode /*mode*/) {
  if (x.dim() != 4 || x.shape()[0] == 0 || x.shape() != arch.input.batch(x.shape()[0])) {
    throw ShapeError("forward: input " + shape_str(x.shape()) + " does not match " +
                     shape_str(arch.input.batch(x.dim() == 4 ? x.shape()[0] : 1)));
  }
  std::size_t expected = 0;
  for (const auto& l : arch.layers) expected += l.kind == LayerKind::ConvBlock ? 4 : 2;
  if (weights.size() != expected) {
    throw ShapeError("forward: weight set has " + std::to_string(weights.size()) +
                     " tensors, architecture needs " + std::to_string(expected));
  }

  const std::size_t batch = x.shape()[0];
  Tensor<T> h = x;
  std::size_t p = 0;
  for (const auto& layer : arch.layers) {
    if (layer.kind == LayerKind::ConvBlock) {
      const auto& kernel = weights.params[p].value;
      const auto& bias = weights.params[p + 1].value;
      const auto& gamma = weights.params[p + 2].value;
      const auto& beta = weights.params[p + 3].value;
      p += 4;
      h = conv2d(h, kernel, 1);
      h = add(h, broadcast_axis(bias, h.shape(), 1));
      h = batch_norm(h, gamma, beta, static_cast<T>(kBatchNormEps));
      h = relu(h);
      h = max_pool2(h);
    } else {
      const auto& w = weights.params[p].value;
      const auto& b = weights.params[p + 1].value;
      p += 2;
      h = reshape(h, Shape{batch, h.numel() / batch});
      h = matmul(h, w, false, true);
      h = add(h, broadcast_axis(b, h.shape(), 1));
    }
  }
  return h;
}

template <typename T>
Tensor<T> cross_entropy(std::span<const std::int32_t> labels, const Tensor<T>& logits) {
  if (logits.dim() != 2) throw ShapeError("cross_entropy: logits must be 2-D, got " + shape_str(logits.shape()));
  const std::size_t rows = logits.shape()[0], classes = logits.shape()[1];
  if (labels.size() != rows) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(rows) + " rows");
  }
  auto index = std::make_shared<std::vector<std::size_t>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= classes) {
      throw std::out_of_range("cross_entropy: label " + std::to_string(labels[r]) +
                              " outside [0, " + std::to_string(classes) + ")");
    }
    (*index)[r] = r * classes + static_cast<std::size_t>(labels[r]);
  }
  const auto picked = gather(log_softmax(logits), IndexList(std::move(index)), Shape{rows});
  return scale(sum_all(picked), T(-1) / static_cast<T>(rows));
}

template <typename T>
double accuracy(std::span<const std::int32_t> labels, const Tensor<T>& logits) {
  if (logits.dim() != 2 || labels.size() != logits.shape()[0]) {
    throw ShapeError("accuracy: labels do not match logits " + shape_str(logits.shape()));
  }
  const std::size_t rows = logits.shape()[0], classes = logits.shape()[1];
  if (rows == 0) return 0.0;
  const auto v = logits.values();
  std::size_t hits = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < classes; ++c) {
      if (v[r * classes + c] > v[r * classes + best]) best = c;
    }
    if (static_cast<std::int32_t>(best) == labels[r]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(rows);
}

template struct WeightSet<double>;
template struct WeightSet<float>;
template Tensor<double> forward(const Architecture&, const WeightSet<double>&, const Tensor<double>&, Mode);
template Tensor<float> forward(const Architecture&, const WeightSet<float>&, const Tensor<float>&, Mode);
template Tensor<double> cross_entropy(std::span<const std::int32_t>, const Tensor<double>&);
template Tensor<float> cross_entropy(std::span<const std::int32_t>, const Tensor<float>&);
template double accuracy(std::span<const std::int32_t>, const Tensor<double>&);
template double accuracy(std::span<const std::int32_t>, const Tensor<float>&);

}  // namespace lmaml
