#include <algorithm>
#include <cstring>
#include <functional>
#include <numeric>
#include <optional>
#include <sstream>

#include "lmaml/tensor.hpp"
#include "tape_internal.hpp"

namespace lmaml {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Leaf: return "leaf";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Neg: return "neg";
    case OpKind::Scale: return "scale";
    case OpKind::AddScalar: return "add_scalar";
    case OpKind::Exp: return "exp";
    case OpKind::Rsqrt: return "rsqrt";
    case OpKind::Relu: return "relu";
    case OpKind::MatMul: return "matmul";
    case OpKind::Conv2d: return "conv2d";
    case OpKind::Conv2dInputGrad: return "conv2d_input_grad";
    case OpKind::Conv2dWeightGrad: return "conv2d_weight_grad";
    case OpKind::BroadcastAxis: return "broadcast_axis";
    case OpKind::SumKeepAxis: return "sum_keep_axis";
    case OpKind::SumAll: return "sum_all";
    case OpKind::BroadcastScalar: return "broadcast_scalar";
    case OpKind::Gather: return "gather";
    case OpKind::ScatterAdd: return "scatter_add";
    case OpKind::LogSoftmax: return "log_softmax";
    case OpKind::Reshape: return "reshape";
  }
  return "unknown";
}

// ---- Tensor ----------------------------------------------------------------

template <typename T>
Tensor<T>::Tensor() : shape_{0}, data_(std::make_shared<const std::vector<T>>()) {}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) : shape_(std::move(shape)) {
  if (shape_numel(shape_) != values.size()) {
    throw ShapeError("tensor: shape " + shape_str(shape_) + " holds " +
                     std::to_string(shape_numel(shape_)) + " values, got " +
                     std::to_string(values.size()));
  }
  data_ = std::make_shared<const std::vector<T>>(std::move(values));
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape) {
  return filled(std::move(shape), T{0});
}

template <typename T>
Tensor<T> Tensor<T>::filled(Shape shape, T value) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<T>(n, value));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value) {
  return Tensor(Shape{}, std::vector<T>{value});
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) {
    throw ShapeError("item: tensor of shape " + shape_str(shape_) + " is not a scalar");
  }
  return (*data_)[0];
}

template <typename T>
bool Tensor<T>::on_tape(const Tape<T>& tape) const noexcept {
  return tape_ != nullptr && tape_ == detail::TensorAccess::tape(tape);
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return detail::TensorAccess::make<T>(shape_, data_);
}

template <typename T>
bool Tensor<T>::same_values(const Tensor& other) const {
  return shape_ == other.shape_ &&
         (data_->empty() || std::memcmp(data_->data(), other.data_->data(), data_->size() * sizeof(T)) == 0);
}

// ---- Tape ------------------------------------------------------------------

template <typename T>
Tape<T>::Tape() : state_(std::make_shared<detail::TapeState<T>>()) {}

template <typename T>
Tensor<T> Tape<T>::watch(const Tensor<T>& value) {
  const auto& owner = detail::TensorAccess::tape(value);
  if (owner == state_) return value;
  if (owner) throw TapeError("watch: tensor is linked to a different tape");
  if (state_->closed) throw TapeError("watch: tape is closed");
  detail::Node<T> node;
  node.kind = OpKind::Leaf;
  node.out_shape = value.shape();
  node.out = detail::TensorAccess::data(value);
  node.generation = state_->active_generation;
  state_->nodes.push_back(std::move(node));
  return detail::TensorAccess::make<T>(value.shape(), detail::TensorAccess::data(value), state_,
                                       state_->nodes.size() - 1);
}

template <typename T>
void Tape<T>::close() {
  state_->closed = true;
}

template <typename T>
bool Tape<T>::closed() const {
  return state_->closed;
}

template <typename T>
std::size_t Tape<T>::size() const {
  return state_->nodes.size();
}

template <typename T>
int Tape<T>::generation() const {
  return state_->generation_counter;
}

template <typename T>
OpKind Tape<T>::op_at(std::size_t node) const {
  return state_->nodes.at(node).kind;
}

template <typename T>
int Tape<T>::generation_at(std::size_t node) const {
  return state_->nodes.at(node).generation;
}

namespace detail {

template <typename T>
Tensor<T> record(OpKind kind, std::initializer_list<const Tensor<T>*> inputs, Shape out_shape,
                 std::vector<T> out, OpAttrs<T> attrs) {
  std::shared_ptr<TapeState<T>> tape;
  for (const Tensor<T>* in : inputs) {
    const auto& t = TensorAccess::tape(*in);
    if (!t) continue;
    if (tape && tape != t) {
      throw TapeError(std::string(op_name(kind)) + ": inputs are linked to different tapes");
    }
    tape = t;
  }
  auto storage = std::make_shared<const std::vector<T>>(std::move(out));
  if (!tape) return TensorAccess::make<T>(std::move(out_shape), std::move(storage));
  if (tape->closed) throw TapeError(std::string(op_name(kind)) + ": tape is closed");

  Node<T> node;
  node.kind = kind;
  node.inputs.reserve(inputs.size());
  for (const Tensor<T>* in : inputs) {
    node.inputs.push_back(Slot<T>{in->shape(), TensorAccess::data(*in), in->node_id()});
  }
  node.out_shape = out_shape;
  node.out = storage;
  node.attrs = std::move(attrs);
  node.generation = tape->active_generation;
  tape->nodes.push_back(std::move(node));
  return TensorAccess::make<T>(std::move(out_shape), std::move(storage), tape,
                               tape->nodes.size() - 1);
}

namespace {

// Gradient of each input given the gradient `g` of the node output. Entries
// for inputs with need[k] == false are left empty. Every rule is written with
// differentiable ops, so recording it yields higher-order derivatives.
template <typename T>
std::vector<std::optional<Tensor<T>>> backward_rule(const Node<T>& node,
                                                    const std::vector<Tensor<T>>& in,
                                                    const Tensor<T>& out, const Tensor<T>& g,
                                                    const std::vector<bool>& need) {
  std::vector<std::optional<Tensor<T>>> gi(in.size());
  const auto& a = node.attrs;
  switch (node.kind) {
    case OpKind::Leaf:
      break;
    case OpKind::Add:
      if (need[0]) gi[0] = g;
      if (need[1]) gi[1] = g;
      break;
    case OpKind::Sub:
      if (need[0]) gi[0] = g;
      if (need[1]) gi[1] = neg(g);
      break;
    case OpKind::Mul:
      if (need[0]) gi[0] = mul(g, in[1]);
      if (need[1]) gi[1] = mul(g, in[0]);
      break;
    case OpKind::Neg:
      gi[0] = neg(g);
      break;
    case OpKind::Scale:
      gi[0] = scale(g, a.scalar);
      break;
    case OpKind::AddScalar:
    case OpKind::Reshape:
      gi[0] = node.kind == OpKind::Reshape ? reshape(g, in[0].shape()) : g;
      break;
    case OpKind::Exp:
      gi[0] = mul(g, out);
      break;
    case OpKind::Rsqrt:
      gi[0] = mul(g, scale(mul(out, mul(out, out)), T(-0.5)));
      break;
    case OpKind::Relu:
      gi[0] = mul(g, TensorAccess::make<T>(node.out_shape, a.mask));
      break;
    case OpKind::MatMul: {
      const bool ta = a.trans_a, tb = a.trans_b;
      if (need[0]) {
        if (!ta && !tb) gi[0] = matmul(g, in[1], false, true);
        else if (ta && !tb) gi[0] = matmul(in[1], g, false, true);
        else if (!ta && tb) gi[0] = matmul(g, in[1], false, false);
        else gi[0] = matmul(in[1], g, true, true);
      }
      if (need[1]) {
        if (!ta && !tb) gi[1] = matmul(in[0], g, true, false);
        else if (ta && !tb) gi[1] = matmul(in[0], g, false, false);
        else if (!ta && tb) gi[1] = matmul(g, in[0], true, false);
        else gi[1] = matmul(g, in[0], true, true);
      }
      break;
    }
    case OpKind::Conv2d:
      if (need[0]) gi[0] = conv2d_input_grad(g, in[1], in[0].shape(), a.pad);
      if (need[1]) gi[1] = conv2d_weight_grad(in[0], g, a.kernel, a.pad);
      break;
    case OpKind::Conv2dInputGrad:
      // out = conv^T(gy, w)
      if (need[0]) gi[0] = conv2d(g, in[1], a.pad);
      if (need[1]) gi[1] = conv2d_weight_grad(g, in[0], a.kernel, a.pad);
      break;
    case OpKind::Conv2dWeightGrad:
      // out = dW(x, gy)
      if (need[0]) gi[0] = conv2d_input_grad(in[1], g, in[0].shape(), a.pad);
      if (need[1]) gi[1] = conv2d(in[0], g, a.pad);
      break;
    case OpKind::BroadcastAxis:
      gi[0] = sum_keep_axis(g, a.axis);
      break;
    case OpKind::SumKeepAxis:
      gi[0] = broadcast_axis(g, in[0].shape(), a.axis);
      break;
    case OpKind::SumAll:
      gi[0] = broadcast_scalar(g, in[0].shape());
      break;
    case OpKind::BroadcastScalar:
      gi[0] = sum_all(g);
      break;
    case OpKind::Gather:
      gi[0] = scatter_add(g, a.index, in[0].shape());
      break;
    case OpKind::ScatterAdd:
      gi[0] = gather(g, a.index, in[0].shape());
      break;
    case OpKind::LogSoftmax: {
      const Shape& s = in[0].shape();
      const auto row_sum = broadcast_axis(sum_keep_axis(g, 0), s, 0);
      gi[0] = sub(g, mul(exp(out), row_sum));
      break;
    }
  }
  return gi;
}

}  // namespace
}  // namespace detail

template <typename T>
std::vector<Tensor<T>> grad(const Tensor<T>& output, std::span<const Tensor<T>> wrt,
                            bool create_graph) {
  using detail::TensorAccess;
  if (output.numel() != 1) {
    throw ShapeError("grad: output must be a scalar, got shape " + shape_str(output.shape()));
  }
  const auto state = TensorAccess::tape(output);
  if (!state) throw TapeError("grad: output is not on a tape");
  for (const auto& w : wrt) {
    if (TensorAccess::tape(w) != state) throw TapeError("grad: wrt tensor is not on the output's tape");
  }

  const std::size_t end = output.node_id();
  std::vector<bool> needs(end + 1, false);
  std::vector<bool> keep(end + 1, false);
  for (const auto& w : wrt) {
    if (w.node_id() <= end) needs[w.node_id()] = keep[w.node_id()] = true;
  }
  for (std::size_t i = 0; i <= end; ++i) {
    if (needs[i]) continue;
    for (const auto& s : state->nodes[i].inputs) {
      if (s.node != kNoNode && needs[s.node]) {
        needs[i] = true;
        break;
      }
    }
  }

  std::vector<std::optional<Tensor<T>>> adj(end + 1);
  const int saved_generation = state->active_generation;
  if (create_graph) state->active_generation = ++state->generation_counter;

  if (needs[end]) {
    adj[end] = Tensor<T>::filled(output.shape(), T{1});
    for (std::size_t i = end + 1; i-- > 0;) {
      if (!adj[i] || !needs[i]) continue;
      // Nodes may be appended while recording; work on a copy.
      const detail::Node<T> node = state->nodes[i];
      if (node.kind == OpKind::Leaf) continue;

      std::vector<Tensor<T>> inputs;
      std::vector<bool> need_in;
      inputs.reserve(node.inputs.size());
      for (const auto& s : node.inputs) {
        const bool linked = create_graph && s.node != kNoNode;
        inputs.push_back(linked ? TensorAccess::make<T>(s.shape, s.data, state, s.node)
                                : TensorAccess::make<T>(s.shape, s.data));
        need_in.push_back(s.node != kNoNode && needs[s.node]);
      }
      const Tensor<T> out = create_graph ? TensorAccess::make<T>(node.out_shape, node.out, state, i)
                                         : TensorAccess::make<T>(node.out_shape, node.out);

      auto contributions = detail::backward_rule(node, inputs, out, *adj[i], need_in);
      for (std::size_t k = 0; k < node.inputs.size(); ++k) {
        if (!need_in[k] || !contributions[k]) continue;
        auto& slot = adj[node.inputs[k].node];
        slot = slot ? add(*slot, *contributions[k]) : *contributions[k];
      }
      if (!keep[i] && !create_graph) adj[i].reset();
    }
  }
  state->active_generation = saved_generation;

  std::vector<Tensor<T>> result;
  result.reserve(wrt.size());
  for (const auto& w : wrt) {
    const std::size_t id = w.node_id();
    if (id <= end && adj[id]) {
      result.push_back(*adj[id]);
    } else {
      result.push_back(Tensor<T>::zeros(w.shape()));
    }
  }
  return result;
}

template class Tensor<double>;
template class Tensor<float>;
template class Tape<double>;
template class Tape<float>;
template std::vector<Tensor<double>> grad(const Tensor<double>&, std::span<const Tensor<double>>,
                                          bool);
template std::vector<Tensor<float>> grad(const Tensor<float>&, std::span<const Tensor<float>>,
                                         bool);
template Tensor<double> detail::record(OpKind, std::initializer_list<const Tensor<double>*>, Shape,
                                       std::vector<double>, detail::OpAttrs<double>);
template Tensor<float> detail::record(OpKind, std::initializer_list<const Tensor<float>*>, Shape,
                                      std::vector<float>, detail::OpAttrs<float>);

}  // namespace lmaml
