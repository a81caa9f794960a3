#include <gtest/gtest.h>

#include <map>
#include <random>

#include "test_util.hpp"

using namespace ctflow;
using ctflow::testing::TempDir;

namespace {

struct Fixture {
  TempDir dir{"loader"};
  SampleStore store;
  Matrix x;

  explicit Fixture(std::size_t n = 500, std::size_t files = 3) {
    std::mt19937_64 rng(17);
    x = ctflow::testing::f32_matrix(n, 4, rng);
    std::vector<std::int64_t> y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = static_cast<std::int64_t>(i % 2);
    for (std::size_t f = 0; f < files; ++f) {
      const auto [b, e] = share_bounds(n, f, files);
      std::vector<std::size_t> rows(e - b);
      std::iota(rows.begin(), rows.end(), b);
      const std::vector<std::int64_t> ys(y.begin() + static_cast<std::ptrdiff_t>(b), y.begin() + static_cast<std::ptrdiff_t>(e));
      store.register_file(ctflow::testing::write_rows(dir / ("f" + std::to_string(f) + ".mdsf"), take_rows(x, rows), ys), {},
                          static_cast<std::int64_t>(f));
    }
  }
};

std::vector<std::uint64_t> drain(EpochStream& s, const Fixture& fx) {
  std::vector<std::uint64_t> keys;
  while (auto b = s.next()) {
    const auto fb = to_feature_batch(*b, 4);
    for (std::size_t i = 0; i < fb.size(); ++i) {
      keys.push_back(fb.keys[i]);
      for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(fb.features(i, j), fx.x(fb.keys[i], j));
    }
  }
  return keys;
}

}  // namespace

TEST(Loader, EverySampleExactlyOnceAcrossConfigurations) {
  Fixture fx;
  std::mt19937_64 rng(3);
  std::vector<WeightedKey> keys;
  for (std::uint64_t k = 0; k < fx.store.size(); ++k) keys.push_back({k, 1.0 + static_cast<double>(k % 3)});
  std::shuffle(keys.begin(), keys.end(), rng);
  keys.resize(431);
  for (int trial = 0; trial < 40; ++trial) {
    LoaderConfig cfg;
    cfg.num_workers = 1 + rng() % 4;
    cfg.prefetch_buffer_partitions = rng() % 4;
    cfg.parallel_prefetch_requests = 1 + rng() % 3;
    cfg.storage_threads = 1 + rng() % 3;
    cfg.storage_buffer_bytes = 64 + rng() % 2048;
    const std::size_t psize = 1 + rng() % 120;
    const std::size_t bs = 1 + rng() % 64;
    const bool shuffle = rng() % 2;
    InMemoryPartitions source(TriggerTrainingSet::from_keys(0, keys, psize));
    EpochStream stream(source, fx.store, cfg, bs, shuffle, 5);
    std::map<std::uint64_t, int> count;
    std::map<std::uint64_t, double> weight;
    while (auto b = stream.next()) {
      EXPECT_LE(b->size(), bs);
      for (std::size_t i = 0; i < b->size(); ++i) {
        ++count[b->keys[i]];
        weight[b->keys[i]] = b->weights[i];
      }
    }
    ASSERT_EQ(count.size(), keys.size()) << "trial " << trial;
    for (const auto& k : keys) {
      EXPECT_EQ(count[k.key], 1);
      EXPECT_EQ(weight[k.key], k.weight);
    }
  }
}

TEST(Loader, SingleWorkerWithoutShuffleKeepsPartitionOrder) {
  Fixture fx;
  std::vector<WeightedKey> keys;
  for (std::uint64_t k = 0; k < 300; ++k) keys.push_back({(k * 37) % fx.store.size(), 1.0});
  InMemoryPartitions source(TriggerTrainingSet::from_keys(0, keys, 64));
  for (std::size_t prefetch : {0u, 1u, 3u}) {
    LoaderConfig cfg;
    cfg.prefetch_buffer_partitions = prefetch;
    cfg.storage_threads = 2;
    EpochStream stream(source, fx.store, cfg, 16, false, 0);
    const auto got = drain(stream, fx);
    ASSERT_EQ(got.size(), keys.size());
    for (std::size_t i = 0; i < keys.size(); ++i) EXPECT_EQ(got[i], keys[i].key);
  }
}

TEST(Loader, PrefetchDoesNotChangeOutput) {
  Fixture fx;
  std::vector<WeightedKey> keys;
  for (std::uint64_t k = 0; k < fx.store.size(); ++k) keys.push_back({k, 1.0});
  InMemoryPartitions source(TriggerTrainingSet::from_keys(0, keys, 50));
  std::vector<std::vector<std::uint64_t>> outputs;
  for (std::size_t prefetch : {0u, 1u, 2u, 8u}) {
    LoaderConfig cfg;
    cfg.num_workers = 3;
    cfg.prefetch_buffer_partitions = prefetch;
    cfg.parallel_prefetch_requests = 2;
    EpochStream stream(source, fx.store, cfg, 32, true, 11);
    outputs.push_back(drain(stream, fx));
  }
  for (const auto& o : outputs) EXPECT_EQ(o, outputs.front());
}

TEST(Loader, PersistedPartitionsLoadLikeMemory) {
  Fixture fx;
  TempDir tts_dir("tts");
  std::vector<WeightedKey> keys;
  for (std::uint64_t k = 0; k < fx.store.size(); k += 2) keys.push_back({k, 0.5});
  const auto tts = TriggerTrainingSet::from_keys(4, keys, 33);
  TriggerSampleStorage storage(tts_dir.path());
  storage.write(tts, 3);
  PersistedPartitions disk(storage, 4);
  InMemoryPartitions mem(tts);
  LoaderConfig cfg;
  cfg.num_workers = 2;
  cfg.prefetch_buffer_partitions = 1;
  EpochStream a(disk, fx.store, cfg, 20, false, 0), b(mem, fx.store, cfg, 20, false, 0);
  EXPECT_EQ(drain(a, fx), drain(b, fx));
}

TEST(Loader, UnknownKeySurfacesAsError) {
  Fixture fx(20, 1);
  const std::vector<WeightedKey> keys{{1, 1.0}, {999, 1.0}};
  InMemoryPartitions source(TriggerTrainingSet::from_keys(0, keys, 10));
  for (std::size_t prefetch : {0u, 2u}) {
    LoaderConfig cfg;
    cfg.prefetch_buffer_partitions = prefetch;
    try {
      EpochStream stream(source, fx.store, cfg, 4, false, 0);
      while (stream.next()) {
      }
      FAIL() << "expected an error";
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), Errc::not_found);
    }
  }
}

TEST(Loader, InvalidConfigurationIsRejected) {
  LoaderConfig cfg;
  cfg.num_workers = 0;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = {};
  cfg.storage_threads = 0;
  EXPECT_THROW(cfg.validate(), Error);
}
