#include <benchmark/benchmark.h>

#include <utility>

#include "stylespace/losses/losses.hpp"
#include "stylespace/models/networks.hpp"
#include "stylespace/tensor/ops.hpp"
#include "stylespace/tensor/optim.hpp"

using namespace stylespace;

namespace {

ArchSpec desk_style(std::size_t dim) { return ArchSpec{3, {16, 32, 64}, {1, 1, 1}, 32, dim, 0}; }

Tensor<float> random_images(std::size_t n, std::size_t res, std::uint64_t seed) {
  RngStream rng(seed, 0);
  Tensor<float> t(Shape{n, 3, res, res});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(rng.uniform(-1.0, 1.0));
  return t;
}

void BM_Conv2d(benchmark::State& state) {
  const auto channels = static_cast<std::size_t>(state.range(0));
  RngStream rng(1, 0);
  Tensor<float> x(Shape{16, channels, 32, 32});
  Tensor<float> w(Shape{channels, channels, 3, 3});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<float>(rng.normal());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = static_cast<float>(rng.normal());
  for (auto _ : state) {
    Tape<float> tape;
    auto y = conv2d(tape.constant(x), tape.leaf(w), Var<float>{}, 1, 1);
    auto loss = sum(y);
    tape.backward(loss);
    benchmark::DoNotOptimize(tape.grad(loss));
  }
}
BENCHMARK(BM_Conv2d)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_StyleStep(benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0));
  RngStream rng(2, 0);
  auto s = build_style_encoder<float>(desk_style(64), rng);
  auto head = build_metric_head<float>(20, 64, rng);
  Optimizer<float> opt_s({OptimizerKind::kAdam, 1e-4});
  Optimizer<float> opt_h({OptimizerKind::kAdam, 1e-4});
  const auto images = random_images(batch, 32, 3);
  std::vector<std::size_t> artists(batch);
  for (std::size_t i = 0; i < batch; ++i) artists[i] = i % 20;
  const std::vector<std::size_t> sizes(20, 100);
  for (auto _ : state) {
    Tape<float> tape;
    Binder<float> sb(tape, s.params);
    Binder<float> hb(tape, head.params);
    auto codes = s.forward(sb, tape.constant(images));
    auto loss = centroid_metric_loss(codes, artists, hb(head.styles), hb(head.log_scale), 0.9, sizes);
    tape.backward(loss);
    opt_s.step(parameter_list(s.params));
    opt_h.step(parameter_list(head.params));
  }
}
BENCHMARK(BM_StyleStep)->Arg(32)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
