#pragma once

// Dense tensors with a reverse-mode tape whose backward rules are built from
// the same recorded ops, so gradients can themselves be differentiated.

#include <cstddef>
#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace lmaml {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class TapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

enum class OpKind : std::uint8_t {
  Leaf,
  Add,
  Sub,
  Mul,
  Neg,
  Scale,
  AddScalar,
  Exp,
  Rsqrt,
  Relu,
  MatMul,
  Conv2d,
  Conv2dInputGrad,
  Conv2dWeightGrad,
  BroadcastAxis,
  SumKeepAxis,
  SumAll,
  BroadcastScalar,
  Gather,
  ScatterAdd,
  LogSoftmax,
  Reshape,
};

std::string_view op_name(OpKind kind);

inline constexpr std::size_t kNoNode = std::numeric_limits<std::size_t>::max();

template <typename T>
class Tape;

namespace detail {
template <typename T>
struct TapeState;
struct TensorAccess;
}  // namespace detail

/// Immutable n-dimensional value. Copies share storage. A tensor may be linked
/// to one tape node; unlinked tensors are constants and never receive gradient.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor();
  Tensor(Shape shape, std::vector<T> values);

  static Tensor zeros(Shape shape);
  static Tensor filled(Shape shape, T value);
  static Tensor scalar(T value);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t dim() const noexcept { return shape_.size(); }
  std::size_t numel() const noexcept { return data_->size(); }
  std::span<const T> values() const noexcept { return {data_->data(), data_->size()}; }
  std::vector<T> to_vector() const { return *data_; }
  T operator[](std::size_t i) const { return (*data_)[i]; }
  T item() const;

  bool on_tape() const noexcept { return tape_ != nullptr; }
  bool on_tape(const Tape<T>& tape) const noexcept;
  std::size_t node_id() const noexcept { return node_; }

  /// Same values, no tape link.
  Tensor detach() const;

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_->begin(), data_->end());
    return Tensor<U>(shape_, std::move(out));
  }

  /// Bitwise equality of shape and values.
  bool same_values(const Tensor& other) const;

 private:
  friend struct detail::TensorAccess;

  Shape shape_;
  std::shared_ptr<const std::vector<T>> data_;
  std::shared_ptr<detail::TapeState<T>> tape_;
  std::size_t node_ = kNoNode;
};

/// Append-only record of operations. Copies of a Tape refer to the same
/// recording. Confined to a single thread.
template <typename T>
class Tape {
 public:
  Tape();

  /// Registers `value` as a leaf. Returns the linked tensor; a tensor already
  /// linked to this tape is returned unchanged.
  Tensor<T> watch(const Tensor<T>& value);

  /// After closing, recording any op with inputs on this tape throws.
  void close();
  bool closed() const;

  std::size_t size() const;
  /// Incremented by every differentiable (create_graph) backward pass.
  int generation() const;
  OpKind op_at(std::size_t node) const;
  int generation_at(std::size_t node) const;

 private:
  friend class Tensor<T>;
  friend struct detail::TensorAccess;
  std::shared_ptr<detail::TapeState<T>> state_;
};

/// Gradients of a scalar `output` with respect to each tensor in `wrt`. Only
/// nodes on a path from some `wrt` entry to `output` are visited. With
/// `create_graph` the backward pass is recorded on the same tape and the
/// returned gradients are differentiable.
template <typename T>
std::vector<Tensor<T>> grad(const Tensor<T>& output, std::span<const Tensor<T>> wrt,
                            bool create_graph = false);

template <typename T>
std::vector<Tensor<T>> grad(const Tensor<T>& output, const std::vector<Tensor<T>>& wrt,
                            bool create_graph = false) {
  return grad(output, std::span<const Tensor<T>>(wrt), create_graph);
}

// ---- differentiable ops ----------------------------------------------------

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> neg(const Tensor<T>& a);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T factor);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& a, T offset);
template <typename T> Tensor<T> exp(const Tensor<T>& a);
/// Elementwise a^(-1/2).
template <typename T> Tensor<T> rsqrt(const Tensor<T>& a);
/// Subgradient 0 at exactly 0.
template <typename T> Tensor<T> relu(const Tensor<T>& a);

/// 2-D product op(a) * op(b), where op transposes when the flag is set.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool trans_a = false,
                 bool trans_b = false);

/// Stride-1 cross-correlation. x: (N, Ci, H, W), w: (Co, Ci, k, k).
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, std::size_t pad);
/// Adjoint of conv2d with respect to its input.
template <typename T>
Tensor<T> conv2d_input_grad(const Tensor<T>& g, const Tensor<T>& w, const Shape& input_shape,
                            std::size_t pad);
/// Adjoint of conv2d with respect to its kernel.
template <typename T>
Tensor<T> conv2d_weight_grad(const Tensor<T>& x, const Tensor<T>& g, std::size_t kernel,
                             std::size_t pad);

/// Repeats a 1-D tensor along every axis of `shape` except `axis`.
template <typename T>
Tensor<T> broadcast_axis(const Tensor<T>& v, const Shape& shape, std::size_t axis);
/// Sums over every axis except `axis`; result is 1-D of length shape[axis].
template <typename T>
Tensor<T> sum_keep_axis(const Tensor<T>& x, std::size_t axis);
template <typename T> Tensor<T> sum_all(const Tensor<T>& x);
template <typename T>
Tensor<T> broadcast_scalar(const Tensor<T>& s, const Shape& shape);

using IndexList = std::shared_ptr<const std::vector<std::size_t>>;

/// out[i] = x.flat[index[i]].
template <typename T>
Tensor<T> gather(const Tensor<T>& x, IndexList index, const Shape& out_shape);
/// out.flat[index[i]] += g[i], out zero-initialised with `shape`.
template <typename T>
Tensor<T> scatter_add(const Tensor<T>& g, IndexList index, const Shape& shape);

/// Row-wise log-softmax of a (rows, cols) tensor.
template <typename T> Tensor<T> log_softmax(const Tensor<T>& x);
template <typename T> Tensor<T> reshape(const Tensor<T>& x, const Shape& shape);

// ---- composites ------------------------------------------------------------

/// 2x2 stride-2 max pool, floors odd sizes. Ties route to the first maximum in
/// row-major window order.
template <typename T> Tensor<T> max_pool2(const Tensor<T>& x);

/// Per-channel normalization of (N, C, H, W) with current-batch statistics.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps);

}  // namespace lmaml
