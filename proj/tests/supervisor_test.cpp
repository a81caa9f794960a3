#include <gtest/gtest.h>

#include <random>

#include "test_util.hpp"

using namespace ctflow;
using ctflow::testing::TempDir;

namespace {

struct Stream {
  TempDir dir{"sup"};
  SampleStore store;
  std::vector<std::uint64_t> keys;

  Stream(std::size_t n, std::vector<std::int64_t> offsets = {}, std::uint64_t seed = 1) {
    std::mt19937_64 rng(seed);
    auto x = ctflow::testing::f32_matrix(n, 2, rng);
    std::vector<std::int64_t> y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = x(i, 0) > 0 ? 1 : 0;
    if (offsets.empty())
      for (std::size_t i = 0; i < n; ++i) offsets.push_back(static_cast<std::int64_t>(i));
    keys = store.register_file(ctflow::testing::write_rows(dir / "s.mdsf", x, y), {}, 0, offsets);
  }
};

PipelineConfig base_config(TriggerPolicy trigger) {
  PipelineConfig cfg;
  cfg.pipeline_id = "test";
  cfg.feature_dim = 2;
  cfg.num_classes = 2;
  cfg.trigger = std::move(trigger);
  cfg.training.batch_size = 16;
  cfg.training.learning_rate = 0.1;
  cfg.selection.partition_size = 50;
  cfg.evaluation.intervals = {IntervalKind::tumbling, 50, 1, AnchorPlacement::start};
  cfg.evaluation.metrics = {metric_from_string("accuracy")};
  cfg.seed = 3;
  return cfg;
}

std::vector<std::size_t> trigger_samples(const PipelineRun& run) {
  std::vector<std::size_t> out;
  for (const auto& e : run.log) out.push_back(e.sample_index);
  return out;
}

}  // namespace

TEST(Triggers, AmountFiresOnEveryNthSample) {
  TriggerEvaluator ev(AmountTrigger{100});
  std::size_t total = 0;
  std::vector<std::size_t> fired;
  for (std::size_t bs : {37u, 100u, 1u, 250u, 12u}) {
    StreamBatch b;
    for (std::size_t i = 0; i < bs; ++i) b.samples.push_back({total + i, static_cast<std::int64_t>(total + i), 0});
    for (const auto& h : ev.evaluate(b, {})) fired.push_back(total + h.index);
    total += bs;
  }
  EXPECT_EQ(fired, (std::vector<std::size_t>{99, 199, 299, 399}));
}

TEST(Triggers, TimeGapSpanningTwoIntervalsEmitsTwo) {
  TriggerEvaluator ev(TimeTrigger{3});
  StreamBatch b;
  for (std::int64_t t : {0, 1, 2, 3, 10, 11}) b.samples.push_back({static_cast<std::uint64_t>(t), t, 0});
  const auto hits = ev.evaluate(b, {});
  ASSERT_EQ(hits.size(), 3u);
  EXPECT_EQ(hits[0].index, 3u);
  EXPECT_EQ(hits[1].index, 4u);
  EXPECT_EQ(hits[2].index, 4u);
}

TEST(Triggers, PerformanceUsesFreshModelAndRespectsMinInterval) {
  // a zero model predicts class 0; all labels are 1 so accuracy is 0
  PerformanceTrigger p{0.5, 10, 0, 25};
  TriggerEvaluator ev(p);
  StreamBatch b;
  Matrix x(100, 2, 1.0);
  for (std::uint64_t i = 0; i < 100; ++i) b.samples.push_back({i, static_cast<std::int64_t>(i), 1});
  const auto hits = ev.evaluate(b, {nullptr, &x, 2, 2});
  std::vector<std::size_t> at;
  for (const auto& h : hits) at.push_back(h.index);
  // window full at sample 10; afterwards at least 25 samples apart and a full window again
  EXPECT_EQ(at, (std::vector<std::size_t>{9, 34, 59, 84}));
}

TEST(Triggers, DriftWarmupForcesPeriodicTriggers) {
  DriftTrigger d;
  d.drift.window_size = 20;
  d.drift.detection_interval = 20;
  d.embedding = DriftEmbedding::raw;
  d.warmup_samples = 100;
  d.min_interval_during_warmup = 40;
  TriggerEvaluator ev(d);
  StreamBatch b;
  Matrix x(200, 2, 0.0);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0, 1);
  for (auto& v : x.data) v = n(rng);
  for (std::uint64_t i = 0; i < 200; ++i) b.samples.push_back({i, static_cast<std::int64_t>(i), 0});
  const auto hits = ev.evaluate(b, {nullptr, &x, 2, 2});
  std::vector<std::size_t> warm;
  for (const auto& h : hits)
    if (h.cause == "drift_warmup") warm.push_back(h.index);
  EXPECT_EQ(warm, (std::vector<std::size_t>{39, 79}));
  EXPECT_FALSE(ev.drift_scores().empty());
}

TEST(Triggers, InvalidPoliciesAreRejected) {
  EXPECT_THROW(TriggerEvaluator(AmountTrigger{0}), Error);
  EXPECT_THROW(TriggerEvaluator(TimeTrigger{0}), Error);
  EXPECT_THROW(TriggerEvaluator(PerformanceTrigger{1.5, 10, 0, 0}), Error);
  TriggerEvaluator needs(PerformanceTrigger{});
  StreamBatch b;
  b.samples.push_back({0, 0, 0});
  EXPECT_THROW(needs.evaluate(b, {}), Error);
}

TEST(Pipeline, ThreeHundredSamplesAmountHundred) {
  Stream s(300);
  const auto run = run_pipeline(base_config(AmountTrigger{100}), s.store, s.keys);
  ASSERT_EQ(run.models.size(), 3u);
  EXPECT_EQ(trigger_samples(run), (std::vector<std::size_t>{99, 199, 299}));
  for (std::size_t r = 0; r < 3; ++r) {
    EXPECT_EQ(run.models[r].training_set_size, 100u);
    EXPECT_EQ(run.models[r].t_start, static_cast<std::int64_t>(100 * r));
    EXPECT_EQ(run.models[r].t_end, static_cast<std::int64_t>(100 * r + 99));
    EXPECT_EQ(run.log[r].model, std::optional<std::uint64_t>(r));
  }
  EXPECT_EQ(run.costs.num_triggers, 3u);
  EXPECT_EQ(run.costs.samples_trained, 300u);
  EXPECT_EQ(pipeline_cost(run, CostKind::num_triggers), 3.0);
}

TEST(Pipeline, TriggerPositionsIndependentOfReplayBatchSize) {
  Stream s(500);
  std::vector<std::vector<std::size_t>> positions;
  std::vector<Matrix> last_models;
  for (std::size_t bs : {1u, 7u, 64u, 500u}) {
    auto cfg = base_config(AmountTrigger{90});
    cfg.data.replay_batch_size = bs;
    const auto run = run_pipeline(cfg, s.store, s.keys);
    positions.push_back(trigger_samples(run));
    last_models.push_back(run.models.back().model.parameters());
  }
  for (std::size_t i = 1; i < positions.size(); ++i) {
    EXPECT_EQ(positions[i], positions[0]);
    EXPECT_EQ(last_models[i], last_models[0]);  // amount triggers do not depend on the model
  }
}

TEST(Pipeline, PoolsPartitionTheStream) {
  Stream s(1000);
  auto cfg = base_config(AmountTrigger{137});
  cfg.data.replay_batch_size = 50;
  const auto run = run_pipeline(cfg, s.store, s.keys);
  std::size_t covered = 0;
  for (const auto& m : run.models) covered += m.training_set_size;
  EXPECT_EQ(covered, (1000 / 137) * 137);
}

TEST(Pipeline, TimeGapLogsSkippedTrigger) {
  Stream s(6, {0, 1, 2, 3, 10, 11});
  auto cfg = base_config(TimeTrigger{3});
  cfg.data.replay_batch_size = 4;
  const auto run = run_pipeline(cfg, s.store, s.keys);
  ASSERT_EQ(run.log.size(), 3u);
  EXPECT_EQ(trigger_samples(run), (std::vector<std::size_t>{3, 4, 4}));
  EXPECT_TRUE(run.log[0].model.has_value());
  EXPECT_TRUE(run.log[1].model.has_value());
  EXPECT_FALSE(run.log[2].model.has_value());
  EXPECT_EQ(run.models.size(), 2u);
  EXPECT_EQ(run.models[1].training_set_size, 1u);
}

TEST(Pipeline, DeterministicAndPreviousModelMatters) {
  Stream s(400);
  auto cfg = base_config(AmountTrigger{100});
  cfg.training.shuffle = true;
  cfg.training.loader.num_workers = 2;
  cfg.downsampling.policy = DownsamplingPolicy::loss;
  cfg.downsampling.ratio = 0.5;
  const auto a = run_pipeline(cfg, s.store, s.keys);
  const auto b = run_pipeline(cfg, s.store, s.keys);
  ASSERT_EQ(a.models.size(), b.models.size());
  for (std::size_t i = 0; i < a.models.size(); ++i) EXPECT_EQ(a.models[i].model, b.models[i].model);

  cfg.training.use_previous_model = false;
  const auto fresh = run_pipeline(cfg, s.store, s.keys);
  EXPECT_EQ(fresh.models[0].model, a.models[0].model);
  EXPECT_NE(fresh.models[3].model, a.models[3].model);
}

TEST(Pipeline, PersistedPartitionsAndModelMirror) {
  Stream s(200);
  TempDir parts("parts"), models("models");
  auto cfg = base_config(AmountTrigger{100});
  cfg.selection.writer_threads = 3;
  cfg.model_storage = {2, DeltaOperator::subtract};
  const auto mem = run_pipeline(cfg, s.store, s.keys);
  const auto disk = run_pipeline(cfg, s.store, s.keys, {models.path(), parts.path()});
  ASSERT_EQ(disk.models.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_EQ(disk.models[i].model, mem.models[i].model);
  EXPECT_TRUE(std::filesystem::exists(parts / "trigger_1_partition_1_2.mdts"));
  const auto store = ModelStore::open(models.path());
  EXPECT_EQ(to_matrix(store.load(1)), disk.models[1].model.parameters());
}

TEST(Pipeline, ErrorsNameTheTrigger) {
  Stream s(100);
  auto cfg = base_config(AmountTrigger{50});
  cfg.num_classes = 2;
  cfg.training.learning_rate = 1e308;
  cfg.training.epochs_per_trigger = 5;
  try {
    run_pipeline(cfg, s.store, s.keys);
    FAIL() << "expected divergence";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::diverged);
    EXPECT_NE(std::string(e.what()).find("trigger "), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("at sample "), std::string::npos) << e.what();
  }
}

TEST(Pipeline, EvaluationShapes) {
  Stream s(600);
  const auto split = s.store.split_stream(0.2, SplitScheme::every_kth, 0);
  auto cfg = base_config(AmountTrigger{120});
  cfg.evaluation.metrics.push_back(metric_from_string("weighted_f1"));
  const auto run = run_pipeline(cfg, s.store, split.train);
  const auto eval = EvalSet::from_store(s.store, split.eval, 2);
  const auto ev = evaluate_run(run, eval);
  ASSERT_EQ(ev.metrics.size(), 2u);
  for (const auto& m : ev.metrics) {
    EXPECT_EQ(m.matrix.rows, run.models.size());
    EXPECT_EQ(m.matrix.cols, ev.intervals.size());
    EXPECT_EQ(m.active.size(), ev.intervals.size());
    EXPECT_FALSE(m.active.front().has_value());  // nothing is trained before the first trigger
    EXPECT_TRUE(m.trained.front().has_value());
  }
  PipelineRun empty;
  EXPECT_THROW(evaluate_run(empty, eval), Error);
}
