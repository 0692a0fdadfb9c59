#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "gradcheck.hpp"
#include "stylespace/models/networks.hpp"

namespace stylespace::testing {

using NetLoss = std::function<Var<double>(Tape<double>&, std::vector<Binder<double>>&)>;

// Worst relative error between backprop parameter gradients and central
// differences, probing at most `per_tensor` evenly spaced scalars per tensor.
inline double param_gradcheck(const std::vector<ParameterStore<double>*>& stores, const NetLoss& f,
                              std::size_t per_tensor = 48, double h = 1e-6) {
  for (auto* s : stores) s->zero_grad();
  {
    Tape<double> tape;
    std::vector<Binder<double>> binders;
    for (auto* s : stores) binders.emplace_back(tape, *s);
    tape.backward(f(tape, binders));
  }
  auto eval = [&] {
    Tape<double> tape;
    std::vector<Binder<double>> binders;
    for (auto* s : stores) binders.emplace_back(tape, std::as_const(*s));
    return f(tape, binders).value().item();
  };
  double worst = 0.0;
  for (auto* s : stores) {
    for (auto& p : *s) {
      const std::size_t n = p.value.size();
      const std::size_t step = std::max<std::size_t>(1, n / per_tensor);
      for (std::size_t i = 0; i < n; i += step) {
        const double x0 = p.value[i];
        p.value[i] = x0 + h;
        const double up = eval();
        p.value[i] = x0 - h;
        const double down = eval();
        p.value[i] = x0;
        const double fd = (up - down) / (2 * h);
        const double analytic = p.has_grad() ? p.grad[i] : 0.0;
        worst = std::max(worst, std::abs(analytic - fd) / std::max(1.0, std::abs(fd)));
      }
    }
  }
  for (auto* s : stores) s->zero_grad();
  return worst;
}

inline ArchSpec tiny_spec(std::size_t resolution, std::size_t code_dim, std::size_t fc = 0,
                          std::size_t blocks = 1) {
  return ArchSpec{2, {4, 4}, {blocks, blocks}, resolution, code_dim, fc};
}

}  // namespace stylespace::testing
