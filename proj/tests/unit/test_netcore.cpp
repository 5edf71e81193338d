#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <numeric>
#include <string>

#include "purekit/energy_model.hpp"
#include "purekit/error.hpp"
#include "purekit/network.hpp"
#include "purekit/optim.hpp"
#include "purekit/parallel.hpp"
#include "purekit/rng.hpp"
#include "reference_net.hpp"

using namespace purekit;

namespace {

const Shape kImage{3, 8, 8};

ImageTensor random_image(Shape s, std::uint64_t seed) {
  ImageTensor x(s);
  RngStream rng(seed, 0);
  rng.fill_uniform(x.values(), 0.0f, 1.0f);
  return x;
}

NetworkParams random_params(const NetworkSpec& spec, float std, std::uint64_t seed) {
  RngStream rng(seed, 1);
  return NetworkParams::normal(spec, std, rng);
}

std::vector<double> to_double(std::span<const float> v) { return {v.begin(), v.end()}; }

constexpr double kFdStep = 1e-3;

// At least half the stencils must be kink-free for the comparison to count.
void expect_valid(const reftest::FdCheck& r, const std::string& what) {
  EXPECT_LT(r.error(), 1e-3) << what;
  EXPECT_LE(r.skipped, r.analytic.size()) << what << " skipped " << r.skipped;
}

reftest::FdCheck fd_input(const NetworkSpec& spec, const NetworkParams& p, const ImageTensor& x,
                          const std::vector<double>& analytic) {
  const auto theta = reftest::flat_params(p);
  auto img = to_double(x.values());
  return reftest::central_differences(img, reftest::all_indices(img.size()), analytic, kFdStep,
                                      [&](std::vector<char>* pat) {
                                        return reftest::weighted_output(spec, theta, img, {1.0}, pat);
                                      });
}

reftest::FdCheck fd_params(const NetworkSpec& spec, const NetworkParams& p, const ImageTensor& x,
                           const std::vector<std::size_t>& idx, const std::vector<double>& analytic) {
  auto theta = reftest::flat_params(p);
  const auto img = to_double(x.values());
  return reftest::central_differences(theta, idx, analytic, kFdStep, [&](std::vector<char>* pat) {
    return reftest::weighted_output(spec, theta, img, {1.0}, pat);
  });
}

std::vector<std::size_t> param_subset(std::size_t total, std::size_t limit, std::uint64_t seed) {
  if (total <= limit) {
    std::vector<std::size_t> all(total);
    std::iota(all.begin(), all.end(), std::size_t{0});
    return all;
  }
  RngStream rng(seed, 2);
  auto idx = sample_without_replacement(total, limit, rng);
  std::sort(idx.begin(), idx.end());
  return idx;
}

NetworkSpec small_energy_net() { return NetworkSpec::energy_net(kImage, 4, 6, 5); }

}  // namespace

TEST(Energy, ZeroParamsGiveZero) {
  const auto spec = NetworkSpec::energy_net(kImage);
  const auto zero = NetworkParams::zeros(spec);
  EXPECT_EQ(energy(spec, zero, random_image(kImage, 1)), 0.0f);
  const auto g = energy_input_grad(spec, zero, random_image(kImage, 2));
  for (float v : g.values()) EXPECT_EQ(v, 0.0f);
}

TEST(Energy, RepeatedCallsAreBitIdentical) {
  const auto spec = NetworkSpec::energy_net(kImage);
  const auto p = random_params(spec, 0.1f, 3);
  const auto x = random_image(kImage, 4);
  const float a = energy(spec, p, x);
  const float b = energy(spec, p, x);
  EXPECT_EQ(std::memcmp(&a, &b, sizeof a), 0);
}

TEST(Energy, SingleDenseLayerIsDotProduct) {
  NetworkSpec spec{kImage, {LayerSpec::dense(192, 1)}};
  const auto p = random_params(spec, 0.5f, 5);
  const auto x = random_image(kImage, 6);
  double dot = p.entries()[1].values[0];
  for (std::size_t i = 0; i < 192; ++i) dot += static_cast<double>(p.entries()[0].values[i]) * x[i];
  EXPECT_NEAR(energy(spec, p, x), dot, 1e-5 * (1 + std::abs(dot)));
}

TEST(Energy, ShapeMismatchNamesBothShapes) {
  const auto spec = NetworkSpec::energy_net(kImage);
  const auto p = NetworkParams::zeros(spec);
  try {
    energy(spec, p, ImageTensor(Shape{1, 8, 8}));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("3x8x8"), std::string::npos) << msg;
    EXPECT_NE(msg.find("1x8x8"), std::string::npos) << msg;
  }
}

TEST(Energy, ForwardMatchesReferenceNetwork) {
  const auto spec = NetworkSpec::energy_net(kImage);
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto p = random_params(spec, 0.1f, 10 + s);
    const auto x = random_image(kImage, 20 + s);
    const double ref = reftest::forward(spec, reftest::flat_params(p), to_double(x.values()))[0];
    EXPECT_NEAR(energy(spec, p, x), ref, 1e-4 * (1 + std::abs(ref)));
  }
}

TEST(Energy, QuadraticSurrogateGradientIsX) {
  const QuadraticEnergy q(kImage, 1.0f);
  const auto x = random_image(kImage, 7);
  ImageTensor g;
  q.energy_and_grad(x, g);
  EXPECT_EQ(g, x);
}

TEST(Energy, InputGradientMatchesFiniteDifferences) {
  // 20 small-net cases plus 5 at the full energy architecture.
  std::vector<NetworkSpec> specs(20, small_energy_net());
  for (int i = 0; i < 5; ++i) specs.push_back(NetworkSpec::energy_net(kImage));
  for (std::size_t c = 0; c < specs.size(); ++c) {
    const auto& spec = specs[c];
    const auto p = random_params(spec, 0.2f, 100 + c);
    const auto x = random_image(kImage, 200 + c);
    const auto analytic = to_double(energy_input_grad(spec, p, x).values());
    expect_valid(fd_input(spec, p, x, analytic), "case " + std::to_string(c));
  }
}

TEST(Energy, ParamGradientMatchesFiniteDifferences) {
  std::vector<NetworkSpec> specs(20, small_energy_net());
  for (int i = 0; i < 3; ++i) specs.push_back(NetworkSpec::energy_net(kImage));
  for (std::size_t c = 0; c < specs.size(); ++c) {
    const auto& spec = specs[c];
    const auto p = random_params(spec, 0.2f, 300 + c);
    const auto x = random_image(kImage, 400 + c);
    const auto idx = param_subset(spec.parameter_count(), 500, c);
    const ImageTensor batch[] = {x};
    const auto flat = energy_param_grad(spec, p, batch).flatten();
    std::vector<double> analytic;
    for (std::size_t i : idx) analytic.push_back(flat[i]);
    expect_valid(fd_params(spec, p, x, idx, analytic), "case " + std::to_string(c));
  }
}

TEST(Energy, ParamGradientIsBatchMean) {
  const auto spec = small_energy_net();
  const auto p = random_params(spec, 0.2f, 8);
  const ImageTensor a = random_image(kImage, 9), b = random_image(kImage, 10);
  const ImageTensor both[] = {a, b};
  const ImageTensor just_a[] = {a};
  const ImageTensor just_b[] = {b};
  const auto g = energy_param_grad(spec, p, both).flatten();
  const auto ga = energy_param_grad(spec, p, just_a).flatten();
  const auto gb = energy_param_grad(spec, p, just_b).flatten();
  for (std::size_t i = 0; i < g.size(); ++i) {
    EXPECT_NEAR(g[i], 0.5 * (ga[i] + gb[i]), 1e-5 * (1 + std::abs(ga[i]) + std::abs(gb[i])));
  }
}

TEST(Energy, DenseParamGradientIsTheInput) {
  NetworkSpec spec{kImage, {LayerSpec::dense(192, 1)}};
  const auto p = random_params(spec, 0.5f, 11);
  const auto x = random_image(kImage, 12);
  const ImageTensor batch[] = {x};
  const auto g = energy_param_grad(spec, p, batch);
  for (std::size_t i = 0; i < 192; ++i) EXPECT_EQ(g.entries()[0].values[i], x[i]);
  EXPECT_EQ(g.entries()[1].values[0], 1.0f);
}

TEST(Energy, ZeroActivationsGiveZeroWeightGradients) {
  const auto spec = NetworkSpec::energy_net(kImage);
  auto p = random_params(spec, 0.2f, 13);
  for (auto& e : p.entries()) {
    if (e.name.ends_with(".bias")) std::fill(e.values.begin(), e.values.end(), 0.0f);
  }
  const ImageTensor batch[] = {ImageTensor(kImage)};
  const auto g = energy_param_grad(spec, p, batch);
  for (const auto& e : g.entries()) {
    if (!e.name.ends_with(".weight")) continue;
    for (float v : e.values) EXPECT_EQ(v, 0.0f) << e.name;
  }
}

TEST(Energy, EmptyBatchIsAnError) {
  const auto spec = small_energy_net();
  EXPECT_THROW(energy_param_grad(spec, NetworkParams::zeros(spec), {}), ConfigError);
}

TEST(Energy, BatchCompositionDoesNotChangeValues) {
  const auto spec = NetworkSpec::energy_net(kImage);
  const auto p = random_params(spec, 0.1f, 14);
  const NetworkEnergy model(spec, p);
  std::vector<ImageTensor> xs;
  for (int i = 0; i < 12; ++i) xs.push_back(random_image(kImage, 500 + i));
  std::vector<float> single;
  for (const auto& x : xs) single.push_back(energy(spec, p, x));
  std::vector<float> pooled(xs.size());
  parallel_for(xs.size(), [&](std::size_t i) { pooled[i] = model.energy(xs[xs.size() - 1 - i]); });
  for (std::size_t i = 0; i < xs.size(); ++i) EXPECT_EQ(single[i], pooled[xs.size() - 1 - i]);
}

TEST(Classifier, ZeroParamsGiveZeroLogits) {
  const auto spec = NetworkSpec::classifier_net(kImage, 10);
  const auto logits = classifier_forward(spec, NetworkParams::zeros(spec), random_image(kImage, 1));
  ASSERT_EQ(logits.size(), 10u);
  for (float v : logits) EXPECT_EQ(v, 0.0f);
}

TEST(Classifier, LogitsAreDeterministic) {
  const auto spec = NetworkSpec::classifier_net(kImage, 10);
  const auto p = random_params(spec, 0.2f, 2);
  const auto x = random_image(kImage, 3);
  EXPECT_EQ(classifier_forward(spec, p, x), classifier_forward(spec, p, x));
}

TEST(Classifier, SoftmaxOfEqualLogitsIsUniform) {
  const std::vector<float> logits(7, 3.25f);
  for (float v : softmax(logits)) EXPECT_FLOAT_EQ(v, 1.0f / 7.0f);
}

TEST(Classifier, UniformLogitsLossIsLogJ) {
  const auto spec = NetworkSpec::classifier_net(kImage, 10);
  const auto r = classifier_backward(spec, NetworkParams::zeros(spec), random_image(kImage, 4), 3);
  EXPECT_NEAR(r.loss, std::log(10.0), 1e-6);
}

TEST(Classifier, LossFallsAsCorrectLogitGrows) {
  std::vector<float> logits{0.5f, -1.0f, 0.25f};
  float prev = softmax_cross_entropy(logits, 0, {});
  for (int i = 0; i < 40; ++i) {
    logits[0] += 1.0f;
    const float loss = softmax_cross_entropy(logits, 0, {});
    EXPECT_LE(loss, prev);
    prev = loss;
  }
  EXPECT_LT(prev, 1e-6f);
}

TEST(Classifier, LabelOutOfRangeIsAnError) {
  const auto spec = NetworkSpec::classifier_net(kImage, 4);
  const auto p = NetworkParams::zeros(spec);
  EXPECT_THROW(classifier_backward(spec, p, random_image(kImage, 5), 4), ConfigError);
  EXPECT_THROW(classifier_backward(spec, p, random_image(kImage, 5), -1), ConfigError);
}

TEST(Classifier, GradientsMatchFiniteDifferences) {
  for (std::uint64_t c = 0; c < 20; ++c) {
    const int classes = 4 + static_cast<int>(c % 7);
    const auto spec = NetworkSpec::classifier_net(kImage, classes);
    const auto p = random_params(spec, 0.3f, 600 + c);
    const auto x = random_image(kImage, 700 + c);
    const int label = static_cast<int>(c) % classes;

    auto theta = reftest::flat_params(p);
    auto img = to_double(x.values());
    const auto idx = param_subset(spec.parameter_count(), 500, c);
    const auto r = classifier_backward(spec, p, x, label);
    const auto flat = r.grads.flatten();
    std::vector<double> analytic;
    for (std::size_t i : idx) analytic.push_back(flat[i]);
    EXPECT_NEAR(r.loss, reftest::cross_entropy(spec, theta, img, label), 1e-4);
    auto loss = [&](std::vector<char>* pat) { return reftest::cross_entropy(spec, theta, img, label, pat); };
    expect_valid(reftest::central_differences(theta, idx, analytic, kFdStep, loss),
                 "param case " + std::to_string(c));

    // Input gradient through Network::backward.
    const Network net(spec, p);
    auto ws = net.make_workspace();
    std::vector<float> dlogits(static_cast<std::size_t>(classes));
    softmax_cross_entropy(net.forward(x, ws), label, dlogits);
    ImageTensor gx(kImage);
    net.backward(dlogits, ws, &gx, nullptr);
    expect_valid(reftest::central_differences(img, reftest::all_indices(img.size()), to_double(gx.values()),
                                              kFdStep, loss),
                 "input case " + std::to_string(c));
  }
}

TEST(Sgd, ZeroLearningRateIsIdentity) {
  const auto spec = small_energy_net();
  auto p = random_params(spec, 0.2f, 1);
  const auto before = p;
  const auto g = random_params(spec, 1.0f, 2);
  SgdState state;
  sgd_step(p, g, SgdConfig{0.0f, 0.9f, 5e-4f}, state);
  EXPECT_EQ(p, before);
}

TEST(Sgd, PlainStepIsPMinusLrG) {
  const auto spec = small_energy_net();
  auto p = random_params(spec, 0.2f, 3);
  const auto before = p;
  const auto g = random_params(spec, 1.0f, 4);
  SgdState state;
  const float lr = 0.037f;
  sgd_step(p, g, SgdConfig{lr, 0.0f, 0.0f}, state);
  for (std::size_t e = 0; e < p.entries().size(); ++e) {
    for (std::size_t i = 0; i < p.entries()[e].values.size(); ++i) {
      const float expect = before.entries()[e].values[i] - lr * g.entries()[e].values[i];
      EXPECT_EQ(p.entries()[e].values[i], expect);
    }
  }
}

TEST(Sgd, MomentumMatchesHandUnrolledRecurrence) {
  const auto spec = small_energy_net();
  auto p = random_params(spec, 0.2f, 5);
  const auto p0 = p;
  const auto g1 = random_params(spec, 1.0f, 6);
  const auto g2 = random_params(spec, 1.0f, 7);
  const float lr = 0.1f, mu = 0.9f, wd = 5e-4f;
  SgdState state;
  sgd_step(p, g1, SgdConfig{lr, mu, wd}, state);
  sgd_step(p, g2, SgdConfig{lr, mu, wd}, state);
  for (std::size_t e = 0; e < p.entries().size(); ++e) {
    for (std::size_t i = 0; i < p.entries()[e].values.size(); ++i) {
      float w = p0.entries()[e].values[i];
      float d1 = g1.entries()[e].values[i] + wd * w;
      float v1 = d1;
      w = w - lr * v1;
      float d2 = g2.entries()[e].values[i] + wd * w;
      float v2 = mu * v1 + d2;
      w = w - lr * v2;
      EXPECT_EQ(p.entries()[e].values[i], w);
    }
  }
}

TEST(Sgd, ShapeMismatchIsAnError) {
  auto p = NetworkParams::zeros(small_energy_net());
  const auto g = NetworkParams::zeros(NetworkSpec::energy_net(kImage));
  SgdState state;
  EXPECT_THROW(sgd_step(p, g, SgdConfig{0.1f, 0.0f, 0.0f}, state), ShapeError);
}

TEST(Params, CountMatchesArchitecture) {
  const auto spec = NetworkSpec::energy_net(kImage);
  // 3*32*9+32 + 32*64*9+64 + 64*64*9+64 + 64+1
  EXPECT_EQ(spec.parameter_count(), 896u + 18496u + 36928u + 65u);
  EXPECT_EQ(NetworkParams::zeros(spec).total_size(), spec.parameter_count());
  const auto names = NetworkParams::zeros(spec).entries();
  ASSERT_EQ(names.size(), 8u);
  EXPECT_EQ(names[0].name, "conv1.weight");
  EXPECT_EQ(names[7].name, "dense1.bias");
}

TEST(Params, SpecStringRoundTrips) {
  const auto spec = NetworkSpec::classifier_net(kImage, 10);
  EXPECT_EQ(NetworkSpec::parse(spec.to_string()), spec);
  EXPECT_THROW(NetworkSpec::parse("in:3x8x8;conv:3:4:8:1:1;dense:1:1"), Error);
}
