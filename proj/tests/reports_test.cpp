#include <gtest/gtest.h>

#include <fstream>
#include <random>

#include "test_util.hpp"

using namespace ctflow;
using ctflow::testing::TempDir;

namespace {

struct RunFixture {
  TempDir data{"rep_data"};
  SampleStore store;
  PipelineRun run;
  RunEvaluation eval;

  explicit RunFixture(std::size_t num_samples = 100) {
    GaussianStreamSpec spec;
    spec.num_samples = 1000;
    spec.dims = 2;
    spec.shift_points = {500};
    store.load_manifest(write_stream(generate_gaussian_stream(spec), data.path(), "s"));
    PipelineConfig cfg;
    cfg.pipeline_id = "rep";
    cfg.feature_dim = 2;
    cfg.trigger = AmountTrigger{num_samples};
    cfg.evaluation.intervals = {IntervalKind::tumbling, 100, 1, AnchorPlacement::start};
    cfg.evaluation.metrics = {metric_from_string("accuracy"), metric_from_string("weighted_f1")};
    const auto split = store.split_stream(0.2, SplitScheme::every_kth, 0);
    run = run_pipeline(cfg, store, split.train);
    if (!run.models.empty()) eval = evaluate_run(run, EvalSet::from_store(store, split.eval, 2));
  }
};

}  // namespace

TEST(Reports, FilesAreWellFormed) {
  RunFixture r(250);
  TempDir out("rep_out");
  write_reports(out.path(), r.run, &r.eval);
  EXPECT_TRUE(check_reports(out.path()).empty());
  const auto rows = detail::parse_csv(detail::read_text(out / "matrix_accuracy.csv"));
  ASSERT_EQ(r.run.models.size(), 3u);
  EXPECT_EQ(rows.size(), 4u);  // header + one row per model
  EXPECT_TRUE(std::filesystem::exists(out / "composite_currently_trained.csv"));
  const auto score = detail::read_json(out / "score.json");
  EXPECT_EQ(score["costs"]["num_triggers"], 3);
  EXPECT_TRUE(score["scores"]["accuracy"]["currently_active"].is_number());
}

TEST(Reports, CheckFindsDamage) {
  RunFixture r(250);
  TempDir out("rep_bad");
  write_reports(out.path(), r.run, &r.eval);
  {
    std::ofstream f(out / "matrix_accuracy.csv", std::ios::app);
    f << "9,0,0,abc\n";
  }
  EXPECT_FALSE(check_reports(out.path()).empty());
  std::filesystem::remove(out / "score.json");
  EXPECT_FALSE(check_reports(out.path()).empty());
}

TEST(Reports, NoTriggerRunHasStatusAndNoMatrix) {
  RunFixture r(5000);
  ASSERT_TRUE(r.run.models.empty());
  TempDir out("rep_none");
  write_reports(out.path(), r.run, nullptr);
  EXPECT_EQ(detail::read_json(out / "run.json")["status"], "no_triggers");
  EXPECT_FALSE(std::filesystem::exists(out / "matrix_accuracy.csv"));
  EXPECT_TRUE(check_reports(out.path()).empty());
}

TEST(Reports, StripWallClockRemovesOnlyTimingFields) {
  const nlohmann::json j = {{"a", 1}, {"wall_seconds", 2.0}, {"costs", {{"wall_clock_seconds", 3.0}, {"num_triggers", 4}}},
                            {"list", {{{"wall_seconds", 1}, {"x", 2}}}}};
  const auto s = strip_wall_clock(j);
  EXPECT_EQ(s, (nlohmann::json{{"a", 1}, {"costs", {{"num_triggers", 4}}}, {"list", {{{"x", 2}}}}}));
}

TEST(Reports, EmbeddedConfigRoundTrips) {
  RunFixture r(250);
  const auto doc = run_to_json(r.run, &r.eval);
  const auto cfg = parse_config_text(doc["config"].get<std::string>());
  EXPECT_EQ(dump_config(cfg), doc["config"].get<std::string>());
}

TEST(Reports, CompareUsesCommonCutoff) {
  RunFixture a(100), b(250);
  a.run.config.pipeline_id = "a";
  b.run.config.pipeline_id = "b";
  a.run.config.evaluation.skip = ScoreSkip::after_first_common_trigger;
  b.run.config.evaluation.skip = ScoreSkip::after_first_common_trigger;
  TempDir da("cmp_a"), db("cmp_b");
  write_reports(da.path(), a.run, &a.eval);
  write_reports(db.path(), b.run, &b.eval);
  const auto points = compare_runs({da.path(), db.path()}, "accuracy", CompositeVariant::currently_active, CostKind::num_triggers);
  ASSERT_EQ(points.size(), 2u);
  // oracle: recompute from the in-memory series with the later first model end
  const std::vector<std::int64_t> firsts{a.run.models.front().t_end, b.run.models.front().t_end};
  const auto cut = first_common_trigger_cutoff(firsts, a.eval.intervals);
  for (const auto& p : points) {
    const auto& src = p.pipeline == "a" ? a : b;
    EXPECT_DOUBLE_EQ(p.score, pipeline_score(src.eval.metrics[0].active, cut));
    EXPECT_EQ(p.cost, static_cast<double>(src.run.models.size()));
  }
}
