#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "stylespace/tensor/tensor.hpp"

namespace stylespace {

/// A learnable tensor. `grad` stays empty until a backward pass reaches the
/// parameter; later passes accumulate into it.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  bool has_grad() const noexcept { return !grad.empty() && grad.size() == value.size(); }
  void zero_grad() { grad = Tensor<T>(); }
};

/// Owns the parameters of one network. Layers refer to parameters by index so
/// copying a store (and the layers that index into it) yields an independent
/// network.
template <typename T>
class ParameterStore {
 public:
  std::size_t add(std::string name, Tensor<T> value);

  Parameter<T>& operator[](std::size_t i) { return params_.at(i); }
  const Parameter<T>& operator[](std::size_t i) const { return params_.at(i); }
  Parameter<T>* find(std::string_view name);
  const Parameter<T>* find(std::string_view name) const;

  std::size_t size() const noexcept { return params_.size(); }
  std::size_t scalar_count() const noexcept;
  void zero_grad();

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::vector<Parameter<T>> params_;
};

template <typename T>
class Tape;

/// Handle to a node recorded on a Tape.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(std::size_t axis) const { return value().dim(axis); }
  bool requires_grad() const;
};

/// Records differentiable operations in execution order. One owner at a time;
/// backward() walks the nodes in exact reverse order and accumulates.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> value);
  /// Differentiable input whose gradient can be read back after backward().
  Var<T> leaf(Tensor<T> value);
  /// Binds a parameter. Untracked parameters act as constants (frozen networks
  /// still propagate gradients to their inputs).
  Var<T> parameter(Parameter<T>& p, bool tracked = true);

  /// Appends a node. `fn` is dropped when no input requires a gradient.
  /// Non-finite values are rejected with a NumericError naming `op`.
  Var<T> push(Tensor<T> value, bool requires_grad, BackwardFn fn, const char* op = "value");

  void backward(const Var<T>& loss);

  const Tensor<T>& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  bool has_grad(std::size_t id) const { return !nodes_[id].grad.empty(); }
  /// Gradient buffer of a node, allocated as zeros on first access.
  Tensor<T>& grad(std::size_t id);
  const Tensor<T>& grad(const Var<T>& v) const { return nodes_[v.id].grad; }

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    BackwardFn backward;
    Parameter<T>* param = nullptr;
    bool keep_grad = false;
  };

  std::vector<Node> nodes_;
  bool done_ = false;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return tape->value(id);
}

template <typename T>
bool Var<T>::requires_grad() const {
  return tape->requires_grad(id);
}

}  // namespace stylespace
