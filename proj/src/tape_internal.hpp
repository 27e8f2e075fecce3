#pragma once

#include <initializer_list>
#include <memory>
#include <vector>

#include "lmaml/tensor.hpp"

namespace lmaml::detail {

template <typename T>
using Storage = std::shared_ptr<const std::vector<T>>;

template <typename T>
struct Slot {
  Shape shape;
  Storage<T> data;
  std::size_t node = kNoNode;
};

template <typename T>
struct OpAttrs {
  T scalar{};
  std::size_t axis = 0;
  std::size_t pad = 0;
  std::size_t kernel = 0;
  bool trans_a = false;
  bool trans_b = false;
  Shape shape;
  IndexList index;
  Storage<T> mask;
};

template <typename T>
struct Node {
  OpKind kind = OpKind::Leaf;
  std::vector<Slot<T>> inputs;
  Shape out_shape;
  Storage<T> out;
  OpAttrs<T> attrs;
  int generation = 0;
};

template <typename T>
struct TapeState {
  std::vector<Node<T>> nodes;
  bool closed = false;
  int generation_counter = 0;
  int active_generation = 0;
};

struct TensorAccess {
  template <typename T>
  static Tensor<T> make(Shape shape, Storage<T> data, std::shared_ptr<TapeState<T>> tape = nullptr,
                        std::size_t node = kNoNode) {
    Tensor<T> t;
    t.shape_ = std::move(shape);
    t.data_ = std::move(data);
    t.tape_ = std::move(tape);
    t.node_ = node;
    return t;
  }
  template <typename T>
  static const Storage<T>& data(const Tensor<T>& t) {
    return t.data_;
  }
  template <typename T>
  static const std::shared_ptr<TapeState<T>>& tape(const Tensor<T>& t) {
    return t.tape_;
  }
  template <typename T>
  static const std::shared_ptr<TapeState<T>>& tape(const Tape<T>& t) {
    return t.state_;
  }
};

/// Builds the output tensor of an op whose forward value is already computed,
/// and appends a node when any input is linked to a tape.
template <typename T>
Tensor<T> record(OpKind kind, std::initializer_list<const Tensor<T>*> inputs, Shape out_shape,
                 std::vector<T> out, OpAttrs<T> attrs = {});

}  // namespace lmaml::detail
