#include "stylespace/tensor/tape.hpp"

#include <algorithm>

namespace stylespace {

template <typename T>
std::size_t ParameterStore<T>::add(std::string name, Tensor<T> value) {
  if (find(name) != nullptr) throw ShapeError("duplicate parameter name '" + name + "'");
  params_.push_back(Parameter<T>{std::move(name), std::move(value), Tensor<T>()});
  return params_.size() - 1;
}

template <typename T>
Parameter<T>* ParameterStore<T>::find(std::string_view name) {
  auto it = std::find_if(params_.begin(), params_.end(),
                         [&](const Parameter<T>& p) { return p.name == name; });
  return it == params_.end() ? nullptr : &*it;
}

template <typename T>
const Parameter<T>* ParameterStore<T>::find(std::string_view name) const {
  return const_cast<ParameterStore*>(this)->find(name);
}

template <typename T>
std::size_t ParameterStore<T>::scalar_count() const noexcept {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

template <typename T>
void ParameterStore<T>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  return push(std::move(value), false, nullptr, "constant");
}

template <typename T>
Var<T> Tape<T>::leaf(Tensor<T> value) {
  Var<T> v = push(std::move(value), true, nullptr, "leaf");
  nodes_.back().keep_grad = true;
  return v;
}

template <typename T>
Var<T> Tape<T>::parameter(Parameter<T>& p, bool tracked) {
  Var<T> v = push(p.value, tracked, nullptr, "parameter");
  if (tracked) {
    nodes_.back().param = &p;
    nodes_.back().keep_grad = true;
  }
  return v;
}

template <typename T>
Var<T> Tape<T>::push(Tensor<T> value, bool requires_grad, BackwardFn fn, const char* op) {
  if (!all_finite(value)) throw NumericError(std::string("non-finite output from ") + op);
  Node node;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  if (requires_grad) node.backward = std::move(fn);
  nodes_.push_back(std::move(node));
  return Var<T>{this, nodes_.size() - 1};
}

template <typename T>
Tensor<T>& Tape<T>::grad(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
  return n.grad;
}

template <typename T>
void Tape<T>::backward(const Var<T>& loss) {
  if (loss.tape != this) throw ShapeError("backward: loss was recorded on a different tape");
  if (loss.value().size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " +
                     shape_string(loss.value().shape()));
  }
  if (done_) throw Error("backward: tape already differentiated");
  done_ = true;
  if (!nodes_[loss.id].requires_grad) return;
  grad(loss.id).fill(T(1));
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad.empty()) continue;
    if (n.backward) n.backward(*this, i);
    if (n.param != nullptr) {
      Parameter<T>& p = *n.param;
      if (!p.has_grad()) {
        p.grad = n.grad;
      } else {
        auto dst = p.grad.data();
        auto src = n.grad.data();
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
      }
    }
    if (!n.keep_grad) n.grad = Tensor<T>();
  }
}

template struct Parameter<float>;
template struct Parameter<double>;
template class ParameterStore<float>;
template class ParameterStore<double>;
template class Tape<float>;
template class Tape<double>;

}  // namespace stylespace
