#include "stylespace/tensor/optim.hpp"

#include <cmath>

namespace stylespace {

OptimizerKind parse_optimizer(const std::string& name) {
  if (name == "adam" || name == "Adam") return OptimizerKind::kAdam;
  if (name == "rmsprop" || name == "RMSprop") return OptimizerKind::kRmsProp;
  throw ConfigError("unknown optimizer '" + name + "'");
}

std::string to_string(OptimizerKind kind) {
  return kind == OptimizerKind::kAdam ? "adam" : "rmsprop";
}

template <typename T>
void Optimizer<T>::step(const std::vector<Parameter<T>*>& params) {
  for (const Parameter<T>* p : params) {
    if (!p->has_grad()) throw Error("optimizer: parameter '" + p->name + "' has no gradient");
  }
  ++steps_;
  const double lr = config_.learning_rate;
  const double eps = config_.epsilon;
  for (Parameter<T>* p : params) {
    auto& v = second_[p->name];
    if (v.size() != p->value.size()) v = Tensor<T>(p->value.shape());
    auto value = p->value.data();
    auto grad = p->grad.data();
    if (config_.kind == OptimizerKind::kAdam) {
      auto& m = first_[p->name];
      if (m.size() != p->value.size()) m = Tensor<T>(p->value.shape());
      const double b1 = config_.beta1, b2 = config_.beta2;
      const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
      const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
      for (std::size_t i = 0; i < value.size(); ++i) {
        const double g = grad[i];
        const double mi = b1 * m[i] + (1.0 - b1) * g;
        const double vi = b2 * v[i] + (1.0 - b2) * g * g;
        m[i] = static_cast<T>(mi);
        v[i] = static_cast<T>(vi);
        value[i] -= static_cast<T>(lr * (mi / c1) / (std::sqrt(vi / c2) + eps));
      }
    } else {
      const double a = config_.rms_decay;
      for (std::size_t i = 0; i < value.size(); ++i) {
        const double g = grad[i];
        const double vi = a * v[i] + (1.0 - a) * g * g;
        v[i] = static_cast<T>(vi);
        value[i] -= static_cast<T>(lr * g / (std::sqrt(vi) + eps));
      }
    }
  }
}

template <typename T>
std::map<std::string, Tensor<T>> Optimizer<T>::state() const {
  std::map<std::string, Tensor<T>> out;
  for (const auto& [name, t] : first_) out["m/" + name] = t;
  for (const auto& [name, t] : second_) out["v/" + name] = t;
  return out;
}

template <typename T>
void Optimizer<T>::restore(const std::map<std::string, Tensor<T>>& state, std::uint64_t steps) {
  first_.clear();
  second_.clear();
  for (const auto& [key, t] : state) {
    if (key.rfind("m/", 0) == 0) {
      first_[key.substr(2)] = t;
    } else if (key.rfind("v/", 0) == 0) {
      second_[key.substr(2)] = t;
    } else {
      throw FormatError("optimizer state: unexpected entry '" + key + "'");
    }
  }
  steps_ = steps;
}

template class Optimizer<float>;
template class Optimizer<double>;

}  // namespace stylespace
