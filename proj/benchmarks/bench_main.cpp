#include <benchmark/benchmark.h>

#include "purekit/defense.hpp"
#include "purekit/energy_model.hpp"
#include "purekit/langevin.hpp"
#include "purekit/network.hpp"
#include "purekit/rng.hpp"

using namespace purekit;

namespace {

ImageTensor random_image(Shape shape, std::uint64_t seed) {
  ImageTensor x(shape);
  RngStream rng(seed, 0);
  rng.fill_uniform(x.values(), 0.0f, 1.0f);
  return x;
}

// Args: image side.
Shape square(const benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  return Shape{3, side, side};
}

void BM_EnergyForward(benchmark::State& state) {
  const auto spec = NetworkSpec::energy_net(square(state), 32, 64, 64);
  RngStream rng(1, 1);
  const Network net(spec, NetworkParams::normal(spec, 0.05f, rng));
  auto ws = net.make_workspace();
  const auto x = random_image(spec.input, 2);
  for (auto _ : state) benchmark::DoNotOptimize(net.forward(x, ws)[0]);
}
BENCHMARK(BM_EnergyForward)->Arg(8)->Arg(16)->Arg(32);

void BM_EnergyInputGrad(benchmark::State& state) {
  const auto spec = NetworkSpec::energy_net(square(state), 32, 64, 64);
  RngStream rng(1, 1);
  const NetworkEnergy model(spec, NetworkParams::normal(spec, 0.05f, rng));
  const auto x = random_image(spec.input, 2);
  ImageTensor g(spec.input);
  for (auto _ : state) benchmark::DoNotOptimize(model.energy_and_grad(x, g));
}
BENCHMARK(BM_EnergyInputGrad)->Arg(8)->Arg(16)->Arg(32);

void BM_EnergyParamGrad(benchmark::State& state) {
  const auto spec = NetworkSpec::energy_net(Shape{3, 8, 8}, 32, 64, 64);
  RngStream rng(1, 1);
  const auto params = NetworkParams::normal(spec, 0.05f, rng);
  std::vector<ImageTensor> batch;
  for (int i = 0; i < state.range(0); ++i) batch.push_back(random_image(spec.input, 10 + i));
  for (auto _ : state) benchmark::DoNotOptimize(energy_param_grad(spec, params, batch));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_EnergyParamGrad)->Arg(16)->Arg(64);

void BM_ClassifierBackward(benchmark::State& state) {
  const auto spec = NetworkSpec::classifier_net(Shape{3, 8, 8}, 4, 16, 32);
  RngStream rng(1, 1);
  const auto params = NetworkParams::normal(spec, 0.1f, rng);
  const auto x = random_image(spec.input, 3);
  for (auto _ : state) benchmark::DoNotOptimize(classifier_backward(spec, params, x, 1).loss);
}
BENCHMARK(BM_ClassifierBackward);

// Psi_T on a batch of 8x8 images; range(0) = T.
void BM_Purify(benchmark::State& state) {
  const auto spec = NetworkSpec::energy_net(Shape{3, 8, 8}, 32, 64, 64);
  RngStream rng(1, 1);
  const NetworkEnergy model(spec, NetworkParams::normal(spec, 0.05f, rng));
  std::vector<ImageTensor> images;
  for (int i = 0; i < 16; ++i) images.push_back(random_image(spec.input, 100 + i));
  LangevinConfig cfg;
  cfg.steps = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(purify(images, model, cfg, 7));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(images.size()) * cfg.steps);
}
BENCHMARK(BM_Purify)->Arg(10)->Arg(150)->Unit(benchmark::kMillisecond);

void BM_PhiloxNormal(benchmark::State& state) {
  RngStream rng(5, 0);
  std::vector<float> out(4096);
  for (auto _ : state) {
    rng.fill_normal(out);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * 4096);
}
BENCHMARK(BM_PhiloxNormal);

}  // namespace

BENCHMARK_MAIN();
