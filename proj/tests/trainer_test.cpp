#include <gtest/gtest.h>

#include <random>

#include "test_util.hpp"

using namespace ctflow;
using ctflow::testing::TempDir;

namespace {

struct Data {
  TempDir dir{"trainer"};
  SampleStore store;
  std::vector<WeightedKey> keys;

  explicit Data(std::size_t n) {
    std::mt19937_64 rng(23);
    auto x = ctflow::testing::f32_matrix(n, 3, rng);
    std::vector<std::int64_t> y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = x(i, 0) + 0.5 * x(i, 1) > 0 ? 1 : 0;
    store.register_file(ctflow::testing::write_rows(dir / "d.mdsf", x, y), {}, 0);
    for (std::uint64_t k = 0; k < n; ++k) keys.push_back({k, 1.0});
  }
};

TrainingConfig base_config() {
  TrainingConfig cfg;
  cfg.batch_size = 32;
  cfg.learning_rate = 0.2;
  cfg.feature_dim = 3;
  return cfg;
}

}  // namespace

TEST(Trainer, BudgetWorkedExample) {
  // 1,000 samples, 10 % budget, 10 epochs
  Data d(1000);
  InMemoryPartitions tts(TriggerTrainingSet::from_keys(0, d.keys, 100));
  for (auto mode : {DownsamplingMode::sample_then_batch, DownsamplingMode::batch_then_sample}) {
    for (auto policy : {DownsamplingPolicy::loss, DownsamplingPolicy::entropy, DownsamplingPolicy::rs2_without_replacement}) {
      if (mode == DownsamplingMode::batch_then_sample && is_rs2(policy)) continue;
      auto cfg = base_config();
      cfg.epochs_per_trigger = 10;
      DownsamplingConfig ds;
      ds.policy = policy;
      ds.ratio = 0.1;
      ds.mode = mode;
      ds.seed = 3;
      const auto r = train_on_trigger(cfg, ds, tts, d.store, LogisticRegression(3, 2));
      ASSERT_EQ(r.epoch_visits.size(), 10u);
      for (auto v : r.epoch_visits) EXPECT_EQ(v, 100u) << to_string(policy);
      EXPECT_EQ(r.samples_visited(), 1000u);
    }
  }
}

TEST(Trainer, BtsCumulativeQuotaOverUnevenBatches) {
  Data d(250);
  InMemoryPartitions tts(TriggerTrainingSet::from_keys(0, d.keys, 77));
  auto cfg = base_config();
  cfg.batch_size = 30;
  DownsamplingConfig ds;
  ds.policy = DownsamplingPolicy::margin;
  ds.mode = DownsamplingMode::batch_then_sample;
  ds.ratio = 0.3;
  const auto r = train_on_trigger(cfg, ds, tts, d.store, LogisticRegression(3, 2));
  EXPECT_EQ(r.epoch_visits.front(), budget(250, 0.3));
}

TEST(Trainer, NoDownsamplingVisitsEverySamplePerEpoch) {
  Data d(130);
  InMemoryPartitions tts(TriggerTrainingSet::from_keys(0, d.keys, 50));
  auto cfg = base_config();
  cfg.epochs_per_trigger = 3;
  const auto r = train_on_trigger(cfg, {}, tts, d.store, LogisticRegression(3, 2));
  EXPECT_EQ(r.epoch_visits, (std::vector<std::size_t>{130, 130, 130}));
  EXPECT_EQ(r.gradient_steps, 3u * 5u);  // 130 / 32 -> 5 batches per epoch
}

TEST(Trainer, MatchesManualSgdOracle) {
  Data d(100);
  InMemoryPartitions tts(TriggerTrainingSet::from_keys(0, d.keys, 100));
  auto cfg = base_config();
  cfg.batch_size = 25;
  cfg.epochs_per_trigger = 2;
  const auto r = train_on_trigger(cfg, {}, tts, d.store, LogisticRegression(3, 2));
  LogisticRegression oracle(3, 2);
  for (int e = 0; e < 2; ++e)
    for (std::size_t first = 0; first < 100; first += 25) {
      FeatureBatch b;
      b.features = Matrix(0, 3);
      for (std::size_t k = first; k < first + 25; ++k) {
        const auto s = d.store.read_sample(k);
        std::vector<double> row(3);
        parse_f32_features(s.payload, row);
        b.features.append_row(row);
        b.labels.push_back(s.label);
        b.weights.push_back(1.0);
      }
      oracle.sgd_step(b, cfg.learning_rate);
    }
  EXPECT_EQ(r.model, oracle);
}

TEST(Trainer, LearnsSeparableData) {
  Data d(2000);
  InMemoryPartitions tts(TriggerTrainingSet::from_keys(0, d.keys, 500));
  auto cfg = base_config();
  cfg.epochs_per_trigger = 5;
  cfg.learning_rate = 0.5;
  const auto r = train_on_trigger(cfg, {}, tts, d.store, LogisticRegression(3, 2));
  std::size_t correct = 0;
  for (std::uint64_t k = 0; k < 2000; ++k) {
    const auto s = d.store.read_sample(k);
    std::vector<double> row(3);
    parse_f32_features(s.payload, row);
    correct += static_cast<std::int64_t>(r.model.predict(row)) == s.label ? 1 : 0;
  }
  EXPECT_GT(correct, 1900u);
}

TEST(Trainer, DeterministicAtFixedSeed) {
  Data d(300);
  InMemoryPartitions tts(TriggerTrainingSet::from_keys(0, d.keys, 64));
  auto cfg = base_config();
  cfg.shuffle = true;
  cfg.seed = 9;
  cfg.epochs_per_trigger = 2;
  cfg.loader.num_workers = 2;
  cfg.loader.prefetch_buffer_partitions = 1;
  DownsamplingConfig ds;
  ds.policy = DownsamplingPolicy::loss;
  ds.ratio = 0.5;
  ds.seed = 4;
  const auto a = train_on_trigger(cfg, ds, tts, d.store, LogisticRegression(3, 2));
  const auto b = train_on_trigger(cfg, ds, tts, d.store, LogisticRegression(3, 2));
  EXPECT_EQ(a.model, b.model);
}

TEST(Trainer, EmptyTriggerSetIsAnError) {
  Data d(10);
  InMemoryPartitions empty(TriggerTrainingSet::from_keys(0, std::vector<WeightedKey>{}, 10));
  try {
    train_on_trigger(base_config(), {}, empty, d.store, LogisticRegression(3, 2));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::empty_trigger);
  }
}
