#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "purekit/defense.hpp"
#include "purekit/error.hpp"
#include "purekit/rng.hpp"

using namespace purekit;

namespace {

const Shape kImage{3, 8, 8};

ImageTensor random_image(std::uint64_t seed) {
  ImageTensor x(kImage);
  RngStream rng(seed, 0);
  rng.fill_uniform(x.values(), 0.0f, 1.0f);
  return x;
}

// Image i carries its index in pixel 0 (scaled into [0,1] so a trigger's
// clamp keeps it), so a predictor can look it up.
struct IndexedSet {
  std::vector<ImageTensor> images;
  std::vector<int> labels;
};

IndexedSet indexed_set(int n, int classes, std::uint64_t seed) {
  IndexedSet s;
  RngStream rng(seed, 3);
  for (int i = 0; i < n; ++i) {
    ImageTensor x(kImage);
    x[0] = static_cast<float>(i) / 4096.0f;
    s.images.push_back(std::move(x));
    s.labels.push_back(static_cast<int>(rng.next_below(static_cast<std::uint32_t>(classes))));
  }
  return s;
}

int index_of(const ImageTensor& x) { return static_cast<int>(std::lround(x[0] * 4096.0f)); }

Predictor table_predictor(std::vector<int> table) {
  return [table = std::move(table)](const ImageTensor& x) { return table[static_cast<std::size_t>(index_of(x))]; };
}

std::vector<int> random_table(int n, int classes, std::uint64_t seed) {
  RngStream rng(seed, 4);
  std::vector<int> t;
  for (int i = 0; i < n; ++i) t.push_back(static_cast<int>(rng.next_below(static_cast<std::uint32_t>(classes))));
  return t;
}

NetworkParams four_params(std::vector<float> v) {
  const NetworkSpec spec{Shape{1, 1, 3}, {LayerSpec::dense(3, 1)}};
  auto p = NetworkParams::zeros(spec);
  std::copy(v.begin(), v.begin() + 3, p.entries()[0].values.begin());
  p.entries()[1].values[0] = v[3];
  return p;
}

}  // namespace

TEST(Metrics, NaturalAccuracyMatchesBruteForce) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const int n = 1 + static_cast<int>(s * 11 % 100);
    const auto set = indexed_set(n, 5, s);
    const auto table = random_table(n, 5, 100 + s);
    int hits = 0;
    for (int i = 0; i < n; ++i) hits += table[static_cast<std::size_t>(i)] == set.labels[static_cast<std::size_t>(i)];
    EXPECT_EQ(natural_accuracy(table_predictor(table), set.images, set.labels), static_cast<double>(hits) / n);
  }
}

TEST(Metrics, AccuracyEdgeCases) {
  const auto set = indexed_set(40, 4, 1);
  EXPECT_EQ(natural_accuracy(table_predictor(set.labels), set.images, set.labels), 1.0);
  const auto constant = [](const ImageTensor&) { return 2; };
  const double prior = static_cast<double>(std::count(set.labels.begin(), set.labels.end(), 2)) / 40.0;
  EXPECT_EQ(natural_accuracy(constant, set.images, set.labels), prior);
  EXPECT_THROW(natural_accuracy(constant, {}, {}), ConfigError);
}

TEST(Metrics, RandomTenClassModelIsNearChance) {
  const auto set = indexed_set(2000, 10, 2);
  const double acc = natural_accuracy(table_predictor(random_table(2000, 10, 3)), set.images, set.labels);
  EXPECT_NEAR(acc, 0.1, 0.02);
}

TEST(Metrics, PerClassAccuracyMatchesBruteForce) {
  const auto set = indexed_set(90, 3, 4);
  const auto table = random_table(90, 3, 5);
  const auto rows = per_class_accuracy(table_predictor(table), set.images, set.labels);
  ASSERT_EQ(rows.size(), 3u);
  for (const auto& r : rows) {
    std::size_t count = 0, hits = 0;
    for (std::size_t i = 0; i < 90; ++i) {
      if (set.labels[i] != r.label) continue;
      ++count;
      hits += table[i] == r.label;
    }
    EXPECT_EQ(r.count, count);
    EXPECT_EQ(r.accuracy, static_cast<double>(hits) / static_cast<double>(count));
  }
}

TEST(Metrics, TriggerlessPsr) {
  const auto set = indexed_set(10, 4, 6);
  std::vector<int> adv(10);
  for (int i = 0; i < 10; ++i) adv[static_cast<std::size_t>(i)] = (set.labels[static_cast<std::size_t>(i)] + 1) % 4;
  EXPECT_EQ(psr_triggerless(table_predictor(adv), set.images, adv), 1.0);
  EXPECT_EQ(psr_triggerless(table_predictor(set.labels), set.images, adv), 0.0);
  auto three = set.labels;
  for (std::size_t i : {1u, 4u, 7u}) three[i] = adv[i];
  EXPECT_DOUBLE_EQ(psr_triggerless(table_predictor(three), set.images, adv), 0.3);
  EXPECT_THROW(psr_triggerless(table_predictor(adv), {}, {}), ConfigError);
}

TEST(Metrics, TriggeredPsrMatchesBruteForce) {
  // The predictor sees the patched image; rho = 0 keeps the index readable.
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto set = indexed_set(100, 4, 10 + s);
    const auto table = random_table(100, 4, 20 + s);
    const int pi = static_cast<int>(s % 4);
    std::size_t den = 0, num = 0;
    for (std::size_t i = 0; i < 100; ++i) {
      if (set.labels[i] == pi) continue;
      ++den;
      num += table[i] == pi;
    }
    const double psr = psr_triggered(table_predictor(table), set.images, set.labels, ImageTensor(kImage), pi);
    EXPECT_EQ(psr, static_cast<double>(num) / static_cast<double>(den));

    // Dropping class-pi images changes nothing.
    IndexedSet rest;
    for (std::size_t i = 0; i < 100; ++i) {
      if (set.labels[i] == pi) continue;
      rest.images.push_back(set.images[i]);
      rest.labels.push_back(set.labels[i]);
    }
    EXPECT_EQ(psr_triggered(table_predictor(table), rest.images, rest.labels, ImageTensor(kImage), pi), psr);
  }
}

TEST(Metrics, TriggeredPsrAppliesTheTrigger) {
  const auto set = indexed_set(20, 2, 7);
  ImageTensor rho(kImage);
  rho[1] = 0.03f;
  const auto flips = [](const ImageTensor& x) { return x[1] > 0.0f ? 1 : 0; };
  EXPECT_EQ(psr_triggered(flips, set.images, set.labels, rho, 1), 1.0);
  EXPECT_EQ(psr_triggered(flips, set.images, set.labels, ImageTensor(kImage), 1), 0.0);
}

TEST(Metrics, TriggeredPsrNeedsNonTargetImages) {
  const auto set = indexed_set(5, 1, 8);
  EXPECT_THROW(psr_triggered(table_predictor(set.labels), set.images, set.labels, ImageTensor(kImage), 0),
               ConfigError);
}

TEST(Divergence, HandComputedFourParameters) {
  const auto a = four_params({1.0f, 2.0f, 3.0f, 4.0f});
  const auto b = four_params({1.5f, 2.0f, 0.0f, 4.25f});
  // |a - b| = {0.5, 0, 3, 0.25}; sorted descending {3, 0.5, 0.25, 0}.
  const std::vector<double> pct{25, 50, 75, 100, 10};
  const auto curve = param_divergence(a, b, pct);
  EXPECT_EQ(curve.percentiles, pct);
  EXPECT_EQ(curve.l1_distance, (std::vector<double>{3.0, 3.5, 3.75, 3.75, 3.0}));
}

TEST(Divergence, IdenticalAndFullPercentile) {
  const auto spec = NetworkSpec::classifier_net(kImage, 4, 4, 6);
  RngStream r1(1, 1), r2(2, 1);
  const auto a = NetworkParams::normal(spec, 0.1f, r1);
  const auto b = NetworkParams::normal(spec, 0.1f, r2);
  const std::vector<double> pct{1, 10, 50, 100};
  for (double d : param_divergence(a, a, pct).l1_distance) EXPECT_EQ(d, 0.0);
  // Brute force: float differences, largest first, summed in double.
  const auto fa = a.flatten(), fb = b.flatten();
  std::vector<float> d;
  for (std::size_t i = 0; i < fa.size(); ++i) d.push_back(std::fabs(fa[i] - fb[i]));
  std::sort(d.begin(), d.end(), std::greater<>());
  const auto curve = param_divergence(a, b, pct);
  for (std::size_t j = 0; j < pct.size(); ++j) {
    const auto k = static_cast<std::size_t>(std::ceil(pct[j] / 100.0 * static_cast<double>(d.size())));
    double l1 = 0;
    for (std::size_t i = 0; i < k; ++i) l1 += d[i];
    EXPECT_EQ(curve.l1_distance[j], l1) << pct[j];
  }
  EXPECT_TRUE(std::is_sorted(curve.l1_distance.begin(), curve.l1_distance.end()));
}

TEST(Divergence, ShapeMismatchIsAnError) {
  const auto a = four_params({1, 2, 3, 4});
  const auto b = NetworkParams::zeros(NetworkSpec::classifier_net(kImage, 4, 4, 6));
  const std::vector<double> pct{50};
  EXPECT_THROW(param_divergence(a, b, pct), ShapeError);
}

TEST(Classifier, ScheduleDecaysAtMilestones) {
  ClassifierConfig c;
  EXPECT_FLOAT_EQ(c.lr_at(0), c.lr);
  EXPECT_FLOAT_EQ(c.lr_at(14), c.lr);
  EXPECT_FLOAT_EQ(c.lr_at(15), c.lr * 0.1f);
  EXPECT_FLOAT_EQ(c.lr_at(25), c.lr * 0.1f * 0.1f);
  c.epochs = -1;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Classifier, MemorizesASmallSeparableSet) {
  // Two classes told apart by mean brightness.
  std::vector<ImageTensor> images;
  std::vector<int> labels;
  for (int i = 0; i < 24; ++i) {
    ImageTensor x(kImage);
    RngStream rng(static_cast<std::uint64_t>(i), 9);
    const float base = i % 2 ? 0.7f : 0.2f;
    rng.fill_uniform(x.values(), base, base + 0.1f);
    images.push_back(std::move(x));
    labels.push_back(i % 2);
  }
  const auto spec = NetworkSpec::classifier_net(kImage, 2, 4, 6);
  ClassifierConfig cfg;
  cfg.epochs = 20;
  cfg.batch_size = 8;
  cfg.milestones = {};
  std::vector<EpochStats> log;
  const auto p = train_classifier(spec, images, labels, cfg, 3, [&](const EpochStats& e) { log.push_back(e); });
  EXPECT_EQ(natural_accuracy(network_predictor(spec, p), images, labels), 1.0);
  ASSERT_EQ(log.size(), 20u);
  EXPECT_LT(log.back().mean_loss, log.front().mean_loss);
  EXPECT_EQ(train_classifier(spec, images, labels, cfg, 3), p);
}

TEST(Defended, ZeroStepPurificationMatchesUndefendedBitwise) {
  PoisonedDataset data;
  for (int i = 0; i < 16; ++i) {
    data.images.push_back(random_image(static_cast<std::uint64_t>(i)));
    data.labels.push_back(i % 3);
    data.poison_mask.push_back(i % 2);
  }
  const auto spec = NetworkSpec::classifier_net(kImage, 3, 4, 6);
  ClassifierConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 4;
  const QuadraticEnergy ebm(kImage, 1.0f);
  LangevinConfig lcfg;
  lcfg.steps = 0;
  const auto defended = train_defended_classifier(spec, data, ebm, lcfg, cfg, 11);
  EXPECT_EQ(defended, train_classifier(spec, data.images, data.labels, cfg, 11));

  // The mask is bookkeeping only.
  auto flipped = data;
  for (auto& m : flipped.poison_mask) m = !m;
  lcfg.steps = 5;
  EXPECT_EQ(train_defended_classifier(spec, data, ebm, lcfg, cfg, 11),
            train_defended_classifier(spec, flipped, ebm, lcfg, cfg, 11));
}

TEST(EnergyGap, IdenticalSetsGiveIdenticalMeans) {
  std::vector<ImageTensor> images;
  for (std::uint64_t i = 0; i < 30; ++i) images.push_back(random_image(i));
  const QuadraticEnergy ebm(kImage, 2.0f);
  const auto gap = energy_gap_report(ebm, images, images, images, 5, 200);
  EXPECT_EQ(gap.clean.mean, gap.poisoned.mean);
  EXPECT_EQ(gap.clean.mean, gap.purified.mean);
  const auto e = energies(ebm, images);
  EXPECT_NEAR(gap.clean.mean, std::accumulate(e.begin(), e.end(), 0.0) / 30.0, 1e-9);
  EXPECT_LE(gap.clean.lo, gap.clean.mean);
  EXPECT_GE(gap.clean.hi, gap.clean.mean);
}

TEST(Report, CsvHasOneRowPerMetric) {
  EvalReport r;
  r.psr = 0.25;
  r.psr_kind = "triggered";
  r.natural_accuracy = 0.5;
  r.per_class = {{0, 10, 0.4}, {1, 10, 0.6}};
  EXPECT_EQ(r.to_csv(),
            "metric,value\npsr_triggered,0.25\nnatural_accuracy,0.5\naccuracy_class_0,0.4\n"
            "accuracy_class_1,0.6\n");
  EXPECT_NE(r.to_text().find("natural accuracy: 50%"), std::string::npos);
}
