#ifndef CTFLOW_SUPERVISOR_HPP
#define CTFLOW_SUPERVISOR_HPP

// Experiment-mode pipeline execution: replays the train split, applies the
// triggering policy per sample and runs selection, training, model storage and
// evaluation for every trigger.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include "ctflow/core.hpp"
#include "ctflow/downsampling.hpp"
#include "ctflow/drift.hpp"
#include "ctflow/evaluator.hpp"
#include "ctflow/learner.hpp"
#include "ctflow/model_store.hpp"
#include "ctflow/selector.hpp"
#include "ctflow/storage.hpp"
#include "ctflow/trainer.hpp"

namespace ctflow {

// ---------------------------------------------------------------------------
// Triggering policies

struct AmountTrigger {
  std::size_t num_samples = 1000;
};

struct TimeTrigger {
  std::int64_t interval = 1;
};

struct PerformanceTrigger {
  double threshold = 0.8;  // accuracy
  std::size_t window_size = 200;
  std::size_t warmup_samples = 0;
  std::size_t min_interval = 0;
};

enum class DriftEmbedding { model, raw };

struct DriftTrigger {
  DriftConfig drift;
  DriftEmbedding embedding = DriftEmbedding::model;
  std::size_t warmup_samples = 0;
  std::size_t min_interval_during_warmup = 1000;
};

using TriggerPolicy = std::variant<AmountTrigger, TimeTrigger, PerformanceTrigger, DriftTrigger>;

inline const char* trigger_name(const TriggerPolicy& p) {
  switch (p.index()) {
    case 0: return "amount";
    case 1: return "time";
    case 2: return "performance";
    default: return "drift";
  }
}

inline bool needs_features(const TriggerPolicy& p) {
  return std::holds_alternative<PerformanceTrigger>(p) || std::holds_alternative<DriftTrigger>(p);
}

inline void validate(const TriggerPolicy& p) {
  if (const auto* a = std::get_if<AmountTrigger>(&p); a && a->num_samples == 0)
    throw Error(Errc::invalid_argument, "num_samples must be >= 1");
  if (const auto* t = std::get_if<TimeTrigger>(&p); t && t->interval <= 0)
    throw Error(Errc::invalid_argument, "time trigger interval must be positive");
  if (const auto* q = std::get_if<PerformanceTrigger>(&p)) {
    if (!(q->threshold > 0.0 && q->threshold < 1.0)) throw Error(Errc::invalid_argument, "accuracy threshold must lie in (0, 1)");
    if (q->window_size == 0) throw Error(Errc::invalid_argument, "performance window_size must be >= 1");
  }
  if (const auto* d = std::get_if<DriftTrigger>(&p)) {
    d->drift.validate();
    if (d->warmup_samples > 0 && d->min_interval_during_warmup == 0)
      throw Error(Errc::invalid_argument, "min_interval_during_warmup must be >= 1");
  }
}

struct TriggerContext {
  const LogisticRegression* model = nullptr;  // latest model; null before the first trigger
  const Matrix* features = nullptr;           // one row per batch sample (feature policies only)
  std::size_t feature_dim = 0;
  std::size_t num_classes = 0;
};

struct TriggerHit {
  std::size_t index = 0;  // position inside the batch
  std::string cause;
};

/// Per-sample trigger decisions evaluated batch by batch. Triggers inside a
/// batch see the model that was current when the batch arrived.
class TriggerEvaluator {
 public:
  explicit TriggerEvaluator(TriggerPolicy policy) : policy_(std::move(policy)) {
    validate(policy_);
    if (const auto* d = std::get_if<DriftTrigger>(&policy_)) detector_.emplace(d->drift);
  }

  std::vector<TriggerHit> evaluate(const StreamBatch& batch, const TriggerContext& ctx) {
    std::vector<TriggerHit> hits;
    if (needs_features(policy_) && (!ctx.features || ctx.features->rows != batch.samples.size()))
      throw Error(Errc::invalid_argument, std::string(trigger_name(policy_)) + " trigger needs batch features");
    for (std::size_t i = 0; i < batch.samples.size(); ++i) {
      ++seen_;
      std::visit([&](const auto& p) { step(p, batch, ctx, i, hits); }, policy_);
    }
    return hits;
  }

  std::size_t samples_seen() const { return seen_; }
  const std::vector<double>& drift_scores() const { return drift_scores_; }

 private:
  void fired(std::vector<TriggerHit>& hits, std::size_t i, std::string cause) {
    hits.push_back({i, std::move(cause)});
    last_trigger_sample_ = seen_;
  }

  void step(const AmountTrigger& p, const StreamBatch&, const TriggerContext&, std::size_t i,
            std::vector<TriggerHit>& hits) {
    if (seen_ % p.num_samples == 0) fired(hits, i, "amount");
  }

  void step(const TimeTrigger& p, const StreamBatch& batch, const TriggerContext&, std::size_t i,
            std::vector<TriggerHit>& hits) {
    const auto ts = batch.samples[i].timestamp;
    if (!next_time_) next_time_ = ts + p.interval;
    // a gap spanning several intervals emits one trigger per elapsed interval
    while (ts >= *next_time_) {
      fired(hits, i, "time");
      *next_time_ += p.interval;
    }
  }

  void step(const PerformanceTrigger& p, const StreamBatch& batch, const TriggerContext& ctx, std::size_t i,
            std::vector<TriggerHit>& hits) {
    if (!fallback_model_) fallback_model_.emplace(ctx.feature_dim, ctx.num_classes);
    const auto& model = ctx.model ? *ctx.model : *fallback_model_;
    const bool correct = static_cast<std::int64_t>(model.predict(ctx.features->row(i))) == batch.samples[i].label;
    window_.push_back(correct);
    correct_in_window_ += correct ? 1 : 0;
    if (window_.size() > p.window_size) {
      correct_in_window_ -= window_.front() ? 1 : 0;
      window_.pop_front();
    }
    if (seen_ <= p.warmup_samples || window_.size() < p.window_size) return;
    if (last_trigger_sample_ > 0 && seen_ - last_trigger_sample_ < p.min_interval) return;
    const double acc = static_cast<double>(correct_in_window_) / static_cast<double>(window_.size());
    if (acc < p.threshold) {
      fired(hits, i, "performance");
      window_.clear();
      correct_in_window_ = 0;
    }
  }

  void step(const DriftTrigger& p, const StreamBatch& batch, const TriggerContext& ctx, std::size_t i,
            std::vector<TriggerHit>& hits) {
    const bool warmup = seen_ <= p.warmup_samples;
    bool fire = false;
    std::string cause = "drift";
    if (detector_->observe(ctx.features->row(i), batch.samples[i].timestamp)) {
      const auto* model = p.embedding == DriftEmbedding::model ? ctx.model : nullptr;
      if (const auto score = detector_->score(model)) {
        drift_scores_.push_back(*score);
        // warmup scores still fill the history; their decisions are ignored
        const bool decision = detector_->decide(*score);
        fire = decision && !warmup;
      }
    }
    if (warmup && seen_ - last_trigger_sample_ >= p.min_interval_during_warmup) {
      fire = true;
      cause = "drift_warmup";
    }
    if (fire) {
      fired(hits, i, cause);
      detector_->reset_reference();
    }
  }

  TriggerPolicy policy_;
  std::size_t seen_ = 0;
  std::size_t last_trigger_sample_ = 0;
  std::optional<std::int64_t> next_time_;
  std::deque<bool> window_;
  std::size_t correct_in_window_ = 0;
  std::optional<LogisticRegression> fallback_model_;
  std::optional<DriftDetector> detector_;
  std::vector<double> drift_scores_;
};

// ---------------------------------------------------------------------------
// Pipeline

enum class ScoreSkip { skip_gaps, after_first_common_trigger };

struct EvaluationConfig {
  IntervalSpec intervals;
  std::vector<Metric> metrics{Metric{}};
  ScoreSkip skip = ScoreSkip::skip_gaps;
  UndefinedTrained undefined_trained = UndefinedTrained::first_model;
};

struct DataConfig {
  std::string dataset;
  std::string bytes_parser = "f32";
  double eval_fraction = 0.2;
  SplitScheme split = SplitScheme::every_kth;
  std::size_t replay_batch_size = 128;
};

struct PipelineConfig {
  std::string pipeline_id = "pipeline";
  std::size_t feature_dim = 1;
  std::size_t num_classes = 2;
  DataConfig data;
  TriggerPolicy trigger = AmountTrigger{1000};
  TrainingConfig training;
  SelectionConfig selection;
  DownsamplingConfig downsampling;
  ModelStoragePolicy model_storage;
  EvaluationConfig evaluation;
  std::uint64_t seed = 0;
};

struct ModelRecord {
  std::uint64_t id = 0;
  std::int64_t t_start = 0;
  std::int64_t t_end = 0;
  std::size_t training_set_size = 0;
  LogisticRegression model;
};

struct TriggerLogEntry {
  std::size_t trigger = 0;         // ordinal among emitted triggers
  std::string cause;
  std::size_t sample_index = 0;    // 0-based position in the train stream
  std::uint64_t key = 0;
  std::int64_t timestamp = 0;
  std::optional<std::uint64_t> model;  // nullopt: skipped (empty pool)
  std::size_t samples_trained = 0;
  double wall_seconds = 0.0;
};

struct PipelineCosts {
  std::size_t num_triggers = 0;
  std::size_t samples_trained = 0;
  double wall_clock_seconds = 0.0;
};

struct PipelineRun {
  PipelineConfig config;
  std::vector<ModelRecord> models;
  std::vector<TriggerLogEntry> log;
  PipelineCosts costs;
  std::vector<double> drift_scores;
};

enum class CostKind { num_triggers, samples_trained, wall_clock_seconds };

inline const char* to_string(CostKind k) {
  switch (k) {
    case CostKind::num_triggers: return "num_triggers";
    case CostKind::samples_trained: return "samples_trained";
    case CostKind::wall_clock_seconds: return "wall_clock_seconds";
  }
  return "unknown";
}

inline CostKind cost_kind_from_string(std::string_view s) {
  for (auto k : {CostKind::num_triggers, CostKind::samples_trained, CostKind::wall_clock_seconds})
    if (s == to_string(k)) return k;
  throw Error(Errc::invalid_argument, "unknown cost kind '" + std::string(s) + "'");
}

inline double pipeline_cost(const PipelineRun& run, CostKind kind) {
  switch (kind) {
    case CostKind::num_triggers: return static_cast<double>(run.models.size());
    case CostKind::samples_trained: return static_cast<double>(run.costs.samples_trained);
    case CostKind::wall_clock_seconds: return run.costs.wall_clock_seconds;
  }
  return 0.0;
}

namespace detail {

inline Matrix batch_features(const SampleStore& store, const StreamBatch& batch, std::size_t dim) {
  std::vector<std::uint64_t> keys;
  keys.reserve(batch.samples.size());
  for (const auto& s : batch.samples) keys.push_back(s.key);
  std::unordered_map<std::uint64_t, std::size_t> row_of;
  row_of.reserve(keys.size());
  for (std::size_t i = 0; i < keys.size(); ++i) row_of.emplace(keys[i], i);
  Matrix out(keys.size(), dim);
  for (const auto& buf : store.get_samples_by_keys(keys))
    for (std::size_t i = 0; i < buf.size(); ++i) parse_f32_features(buf.payload(i), out.row(row_of.at(buf.keys[i])));
  return out;
}

}  // namespace detail

struct RunOptions {
  std::optional<std::filesystem::path> model_dir;      // mirror of the model store
  std::optional<std::filesystem::path> partition_dir;  // persist trigger training sets
};

/// Replays `train_keys` in (timestamp, key) order. The sample causing a
/// trigger closes that trigger's pool; later samples of the batch go to the
/// next pool.
inline PipelineRun run_pipeline(const PipelineConfig& cfg, const SampleStore& store,
                                std::span<const std::uint64_t> train_keys, const RunOptions& options = {}) {
  using clock = std::chrono::steady_clock;
  const auto started = clock::now();
  cfg.training.validate();
  cfg.downsampling.validate();
  validate(cfg.trigger);
  if (cfg.data.replay_batch_size == 0) throw Error(Errc::invalid_argument, "replay batch size must be positive");

  PipelineRun run;
  run.config = cfg;
  auto selection = cfg.selection;
  selection.seed = derive_seed(cfg.seed, "selector");
  Selector selector(selection);
  TriggerEvaluator triggers(cfg.trigger);
  ModelStore models(cfg.model_storage, options.model_dir);
  std::optional<TriggerSampleStorage> tts_storage;
  if (options.partition_dir) tts_storage.emplace(*options.partition_dir);

  TrainingConfig training = cfg.training;
  if (training.feature_dim == 0) training.feature_dim = cfg.feature_dim;

  std::size_t stream_pos = 0;
  for (const auto& batch : store.replay(cfg.data.replay_batch_size, train_keys)) {
    std::optional<Matrix> features;
    if (needs_features(cfg.trigger)) features = detail::batch_features(store, batch, cfg.feature_dim);
    const TriggerContext ctx{run.models.empty() ? nullptr : &run.models.back().model, features ? &*features : nullptr,
                             cfg.feature_dim, cfg.num_classes};
    const auto hits = triggers.evaluate(batch, ctx);

    std::size_t informed = 0;
    for (const auto& hit : hits) {
      const auto trigger_started = clock::now();
      if (hit.index + 1 > informed) {
        selector.inform_samples(std::span(batch.samples).subspan(informed, hit.index + 1 - informed));
        informed = hit.index + 1;
      }
      const auto& sample = batch.samples[hit.index];
      TriggerLogEntry entry{run.log.size(), hit.cause, stream_pos + hit.index, sample.key, sample.timestamp, {}, 0, 0.0};
      if (selector.current_pool_size() == 0) {
        // a repeated trigger on the same sample has no new data
        entry.wall_seconds = std::chrono::duration<double>(clock::now() - trigger_started).count();
        run.log.push_back(std::move(entry));
        continue;
      }
      try {
        auto tts = selector.inform_trigger();
        std::int64_t t_start = selector.last_window().front().timestamp;
        for (const auto& e : selector.last_window()) t_start = std::min(t_start, e.timestamp);
        const auto r = run.models.size();

        auto start_model = cfg.training.use_previous_model && !run.models.empty()
                               ? run.models.back().model
                               : LogisticRegression(cfg.feature_dim, cfg.num_classes);
        training.seed = derive_seed(cfg.seed, "trainer", r);
        auto downsampling = cfg.downsampling;
        downsampling.seed = derive_seed(cfg.seed, "downsampling", r);

        TrainingResult result = [&] {
          if (tts.total_count() == 0) throw Error(Errc::empty_trigger, "trigger training set is empty");
          if (tts_storage) {
            tts_storage->write(tts, selection.writer_threads);
            PersistedPartitions source(*tts_storage, tts.trigger_id);
            return train_on_trigger(training, downsampling, source, store, std::move(start_model));
          }
          InMemoryPartitions source(tts);
          return train_on_trigger(training, downsampling, source, store, std::move(start_model));
        }();

        const auto& artifact = models.store(to_tensor(result.model.parameters()));
        run.models.push_back({artifact.id, t_start, sample.timestamp, tts.total_count(), std::move(result.model)});
        entry.model = artifact.id;
        entry.samples_trained = result.samples_visited();
        run.costs.samples_trained += entry.samples_trained;
      } catch (const Error& e) {
        throw Error(e.code(), "trigger " + std::to_string(entry.trigger) + " at sample " +
                                  std::to_string(entry.sample_index) + ": " + e.what());
      }
      entry.wall_seconds = std::chrono::duration<double>(clock::now() - trigger_started).count();
      run.log.push_back(std::move(entry));
    }
    if (informed < batch.samples.size()) selector.inform_samples(std::span(batch.samples).subspan(informed));
    stream_pos += batch.samples.size();
  }
  run.costs.num_triggers = run.models.size();
  run.costs.wall_clock_seconds = std::chrono::duration<double>(clock::now() - started).count();
  run.drift_scores = triggers.drift_scores();
  return run;
}

// ---------------------------------------------------------------------------
// Evaluation of a finished run

struct MetricReport {
  Metric metric;
  EvaluationMatrix matrix;
  CompositeSeries active;
  CompositeSeries trained;
};

struct RunEvaluation {
  std::vector<EvaluationInterval> intervals;
  std::vector<MetricReport> metrics;
};

inline std::vector<std::int64_t> model_ends(const PipelineRun& run) {
  std::vector<std::int64_t> ends;
  for (const auto& m : run.models) ends.push_back(m.t_end);
  return ends;
}

/// Builds the matrix and both composite series for every configured metric.
/// Intervals cover [first, last] eval timestamp.
inline RunEvaluation evaluate_run(const PipelineRun& run, const EvalSet& eval) {
  if (run.models.empty()) throw Error(Errc::no_triggers, "pipeline produced no models");
  if (eval.size() == 0) throw Error(Errc::validation, "evaluation split is empty");
  const auto& ec = run.config.evaluation;
  RunEvaluation out;
  const auto t0 = eval.timestamps.front();
  const auto t1 = std::max(eval.timestamps.back(), t0 + 1);
  out.intervals = generate_intervals(ec.intervals, t0, t1);
  std::vector<LogisticRegression> models;
  for (const auto& m : run.models) models.push_back(m.model);
  const auto ends = model_ends(run);
  const auto active = composite_mapping(ends, out.intervals, CompositeVariant::currently_active);
  const auto trained = composite_mapping(ends, out.intervals, CompositeVariant::currently_trained, ec.undefined_trained);
  for (const auto& metric : ec.metrics) {
    MetricReport r{metric, build_matrix(models, out.intervals, eval, metric), {}, {}};
    r.active = composite_series(r.matrix, active);
    r.trained = composite_series(r.matrix, trained);
    out.metrics.push_back(std::move(r));
  }
  return out;
}

/// Interval index from which the pipeline score is averaged.
inline std::size_t score_cutoff(const PipelineRun& run, const std::vector<EvaluationInterval>& intervals,
                                std::span<const std::int64_t> other_first_ends = {}) {
  if (run.config.evaluation.skip == ScoreSkip::skip_gaps || run.models.empty()) return 0;
  std::vector<std::int64_t> firsts(other_first_ends.begin(), other_first_ends.end());
  firsts.push_back(run.models.front().t_end);
  return first_common_trigger_cutoff(firsts, intervals);
}

}  // namespace ctflow

#endif  // CTFLOW_SUPERVISOR_HPP
