#include "stylespace/tensor/tensor.hpp"

#include <cmath>

namespace stylespace {

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

template <typename T>
bool all_finite(const Tensor<T>& t) {
  for (const T v : t.data()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

template bool all_finite<float>(const Tensor<float>&);
template bool all_finite<double>(const Tensor<double>&);

}  // namespace stylespace
