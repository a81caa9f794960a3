#ifndef CTFLOW_CONFIG_HPP
#define CTFLOW_CONFIG_HPP

// Declarative pipeline documents (YAML). Field names follow the usual
// pipeline listing layout: model, data, trigger, training.selection_strategy,
// model_storage, evaluation. Parsing collects every violation with its path.

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <yaml-cpp/yaml.h>

#include "ctflow/core.hpp"
#include "ctflow/supervisor.hpp"

namespace ctflow {

struct ConfigIssue {
  std::string path;
  std::string message;

  friend bool operator==(const ConfigIssue&, const ConfigIssue&) = default;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(std::vector<ConfigIssue> issues)
      : Error(Errc::validation, summarize(issues)), issues_(std::move(issues)) {}
  ConfigError(std::string path, std::string message) : ConfigError(std::vector<ConfigIssue>{{std::move(path), std::move(message)}}) {}
  const std::vector<ConfigIssue>& issues() const { return issues_; }

 private:
  static std::string summarize(const std::vector<ConfigIssue>& issues) {
    std::string s = std::to_string(issues.size()) + " configuration error(s)";
    for (const auto& i : issues) s += "\n  " + i.path + ": " + i.message;
    return s;
  }
  std::vector<ConfigIssue> issues_;
};

namespace detail {

class ConfigReader {
 public:
  std::vector<ConfigIssue> issues;

  static std::string join(const std::string& path, std::string_view key) {
    return path.empty() ? std::string(key) : path + "." + std::string(key);
  }

  void fail(const std::string& path, std::string message) { issues.push_back({path, std::move(message)}); }

  /// Rejects keys outside `allowed`; returns false when `node` is not a map.
  bool expect_map(const YAML::Node& node, const std::string& path, std::initializer_list<std::string_view> allowed) {
    if (!node || node.IsNull()) return false;
    if (!node.IsMap()) {
      fail(path, "expected a mapping");
      return false;
    }
    for (const auto& kv : node) {
      const auto key = kv.first.as<std::string>();
      if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) fail(join(path, key), "unknown key");
    }
    return true;
  }

  template <typename T>
  bool scalar(const YAML::Node& node, const std::string& path, std::string_view key, T& out, const char* type) {
    if (!node || !node.IsMap()) return false;
    const auto child = node[std::string(key)];
    if (!child || child.IsNull()) return false;
    try {
      if (!child.IsScalar()) throw YAML::Exception(YAML::Mark::null_mark(), "not a scalar");
      out = child.as<T>();
      return true;
    } catch (const YAML::Exception&) {
      fail(join(path, key), std::string("expected ") + type);
      return false;
    }
  }

  void text(const YAML::Node& n, const std::string& path, std::string_view key, std::string& out) {
    scalar(n, path, key, out, "a string");
  }

  void flag(const YAML::Node& n, const std::string& path, std::string_view key, bool& out) {
    scalar(n, path, key, out, "a boolean");
  }

  void count(const YAML::Node& n, const std::string& path, std::string_view key, std::size_t& out,
             std::size_t min = 0) {
    long long v = 0;
    if (!scalar(n, path, key, v, "an integer")) return;
    if (v < static_cast<long long>(min)) {
      fail(join(path, key), "must be >= " + std::to_string(min));
      return;
    }
    out = static_cast<std::size_t>(v);
  }

  void integer(const YAML::Node& n, const std::string& path, std::string_view key, std::int64_t& out,
               std::int64_t min = std::numeric_limits<std::int64_t>::min()) {
    long long v = 0;
    if (!scalar(n, path, key, v, "an integer")) return;
    if (v < min) {
      fail(join(path, key), "must be >= " + std::to_string(min));
      return;
    }
    out = v;
  }

  /// Real in (lo, hi] / [lo, hi] / (lo, hi) depending on the open flags.
  void real(const YAML::Node& n, const std::string& path, std::string_view key, double& out, double lo, double hi,
            bool lo_open, bool hi_open) {
    double v = 0.0;
    if (!scalar(n, path, key, v, "a number")) return;
    const bool ok = std::isfinite(v) && (lo_open ? v > lo : v >= lo) && (hi_open ? v < hi : v <= hi);
    if (!ok) {
      std::ostringstream range;
      range << (lo_open ? "(" : "[") << lo << ", " << hi << (hi_open ? ")" : "]");
      fail(join(path, key), "must lie in " + range.str());
      return;
    }
    out = v;
  }

  template <typename E, typename Parse>
  void choice(const YAML::Node& n, const std::string& path, std::string_view key, E& out, Parse parse) {
    std::string s;
    if (!scalar(n, path, key, s, "a string")) return;
    try {
      out = parse(s);
    } catch (const Error& e) {
      fail(join(path, key), e.what());
    }
  }
};

inline Presampling presampling_from_string(std::string_view s) {
  for (auto p : {Presampling::none, Presampling::uniform, Presampling::class_balanced, Presampling::trigger_balanced})
    if (s == to_string(p)) return p;
  throw Error(Errc::invalid_argument, "unknown presampling strategy '" + std::string(s) + "'");
}

inline const char* to_string(DownsamplingMode m) {
  return m == DownsamplingMode::sample_then_batch ? "sample_then_batch" : "batch_then_sample";
}

inline DownsamplingMode downsampling_mode_from_string(std::string_view s) {
  if (s == "sample_then_batch" || s == "StB") return DownsamplingMode::sample_then_batch;
  if (s == "batch_then_sample" || s == "BtS") return DownsamplingMode::batch_then_sample;
  throw Error(Errc::invalid_argument, "unknown downsampling mode '" + std::string(s) + "'");
}

template <typename E>
E pick(std::string_view s, const std::vector<std::pair<std::string_view, E>>& options, std::string_view what) {
  for (const auto& [name, value] : options)
    if (s == name) return value;
  throw Error(Errc::invalid_argument, "unknown " + std::string(what) + " '" + std::string(s) + "'");
}

template <typename E>
std::string_view name_of(E value, const std::vector<std::pair<std::string_view, E>>& options) {
  for (const auto& [name, v] : options)
    if (v == value) return name;
  return "unknown";
}

inline const std::vector<std::pair<std::string_view, SplitScheme>> kSplitNames = {
    {"every_kth", SplitScheme::every_kth}, {"hash_modulo", SplitScheme::hash_modulo}};
inline const std::vector<std::pair<std::string_view, SelectorBackendKind>> kBackendNames = {
    {"memory", SelectorBackendKind::memory}, {"local", SelectorBackendKind::local}};
inline const std::vector<std::pair<std::string_view, IntervalKind>> kIntervalNames = {
    {"tumbling", IntervalKind::tumbling}, {"sliding", IntervalKind::sliding}};
inline const std::vector<std::pair<std::string_view, AnchorPlacement>> kAnchorNames = {
    {"start", AnchorPlacement::start}, {"center", AnchorPlacement::center}};
inline const std::vector<std::pair<std::string_view, ScoreSkip>> kSkipNames = {
    {"skip_gaps", ScoreSkip::skip_gaps}, {"after_first_common_trigger", ScoreSkip::after_first_common_trigger}};
inline const std::vector<std::pair<std::string_view, UndefinedTrained>> kUndefinedNames = {
    {"first", UndefinedTrained::first_model}, {"last", UndefinedTrained::last_model}};
inline const std::vector<std::pair<std::string_view, WindowKind>> kWindowNames = {
    {"samples", WindowKind::samples}, {"seconds", WindowKind::seconds}};
inline const std::vector<std::pair<std::string_view, DriftEmbedding>> kEmbeddingNames = {
    {"model", DriftEmbedding::model}, {"raw", DriftEmbedding::raw}};

inline TriggerPolicy parse_trigger(ConfigReader& r, const YAML::Node& n, const std::string& path) {
  std::string id = "DataAmountTrigger";
  if (!n || n.IsNull()) return AmountTrigger{};
  r.text(n, path, "id", id);
  if (id == "DataAmountTrigger") {
    r.expect_map(n, path, {"id", "num_samples"});
    AmountTrigger t{};
    r.count(n, path, "num_samples", t.num_samples, 1);
    return t;
  }
  if (id == "TimeTrigger") {
    r.expect_map(n, path, {"id", "every"});
    TimeTrigger t{};
    r.integer(n, path, "every", t.interval, 1);
    return t;
  }
  if (id == "PerformanceTrigger") {
    r.expect_map(n, path, {"id", "metric", "threshold", "window_size", "warmup_samples", "min_interval"});
    PerformanceTrigger t{};
    std::string metric = "accuracy";
    r.text(n, path, "metric", metric);
    if (metric != "accuracy") r.fail(ConfigReader::join(path, "metric"), "only accuracy is supported");
    r.real(n, path, "threshold", t.threshold, 0.0, 1.0, true, true);
    r.count(n, path, "window_size", t.window_size, 1);
    r.count(n, path, "warmup_samples", t.warmup_samples);
    r.count(n, path, "min_interval", t.min_interval);
    return t;
  }
  if (id == "DataDriftTrigger") {
    r.expect_map(n, path, {"id", "detection_interval", "window_size", "window_kind", "kernel_bandwidth", "decision",
                           "use_pca", "pca_dims", "embedding", "warmup_samples", "min_interval_during_warmup"});
    DriftTrigger t{};
    r.count(n, path, "detection_interval", t.drift.detection_interval, 1);
    r.count(n, path, "window_size", t.drift.window_size, 1);
    r.choice(n, path, "window_kind", t.drift.window_kind, [](auto s) { return pick(s, kWindowNames, "window kind"); });
    if (n["kernel_bandwidth"] && !n["kernel_bandwidth"].IsNull()) {
      std::string s;
      r.scalar(n, path, "kernel_bandwidth", s, "a number or median_heuristic");
      if (s != "median_heuristic") {
        double h = 0.0;
        r.real(n, path, "kernel_bandwidth", h, 0.0, std::numeric_limits<double>::max(), true, false);
        if (h > 0.0) t.drift.kernel_bandwidth = h;
      }
    }
    const auto d = n["decision"];
    const auto dpath = ConfigReader::join(path, "decision");
    if (d && !d.IsNull()) {
      std::string did = "PercentileDecision";
      r.text(d, dpath, "id", did);
      if (did == "ThresholdDecision") {
        r.expect_map(d, dpath, {"id", "threshold"});
        ThresholdDecision td{};
        r.real(d, dpath, "threshold", td.threshold, 0.0, std::numeric_limits<double>::max(), false, false);
        t.drift.decision = td;
      } else if (did == "PercentileDecision") {
        r.expect_map(d, dpath, {"id", "history_len", "percentile"});
        PercentileDecision pd{};
        r.count(d, dpath, "history_len", pd.history_len, 1);
        r.real(d, dpath, "percentile", pd.percentile, 0.0, 1.0, true, true);
        t.drift.decision = pd;
      } else {
        r.fail(ConfigReader::join(dpath, "id"), "unknown decision '" + did + "'");
      }
    }
    r.flag(n, path, "use_pca", t.drift.use_pca);
    r.count(n, path, "pca_dims", t.drift.pca_dims, 1);
    r.choice(n, path, "embedding", t.embedding, [](auto s) { return pick(s, kEmbeddingNames, "embedding"); });
    r.count(n, path, "warmup_samples", t.warmup_samples);
    r.count(n, path, "min_interval_during_warmup", t.min_interval_during_warmup, 1);
    return t;
  }
  r.fail(ConfigReader::join(path, "id"), "unknown trigger '" + id + "'");
  return AmountTrigger{};
}

}  // namespace detail

/// Parses a pipeline document. Throws ConfigError listing every violation.
inline PipelineConfig parse_config(const YAML::Node& doc) {
  detail::ConfigReader r;
  PipelineConfig c;
  c.training.loader.storage_buffer_bytes = SampleStore::kDefaultBufferBytes;
  if (!doc.IsMap()) throw ConfigError("", "document must be a mapping");
  r.expect_map(doc, "", {"pipeline", "seed", "model", "data", "trigger", "training", "model_storage", "evaluation"});

  if (const auto p = doc["pipeline"]; r.expect_map(p, "pipeline", {"name"})) r.text(p, "pipeline", "name", c.pipeline_id);
  long long seed = 0;
  if (r.scalar(doc, "", "seed", seed, "an integer")) c.seed = static_cast<std::uint64_t>(seed);

  if (const auto m = doc["model"]; r.expect_map(m, "model", {"id", "config"})) {
    std::string id = "LogisticRegression";
    r.text(m, "model", "id", id);
    if (id != "LogisticRegression") r.fail("model.id", "unknown model '" + id + "'");
    if (const auto mc = m["config"]; r.expect_map(mc, "model.config", {"num_features", "num_classes"})) {
      r.count(mc, "model.config", "num_features", c.feature_dim, 1);
      r.count(mc, "model.config", "num_classes", c.num_classes, 2);
    }
  }

  if (const auto d = doc["data"]; r.expect_map(d, "data", {"dataset_id", "bytes_parser_function", "split", "replay_batch_size"})) {
    r.text(d, "data", "dataset_id", c.data.dataset);
    r.text(d, "data", "bytes_parser_function", c.data.bytes_parser);
    if (c.data.bytes_parser != "f32") r.fail("data.bytes_parser_function", "only the f32 parser is available");
    if (const auto s = d["split"]; r.expect_map(s, "data.split", {"eval_fraction", "scheme"})) {
      r.real(s, "data.split", "eval_fraction", c.data.eval_fraction, 0.0, 1.0, true, true);
      r.choice(s, "data.split", "scheme", c.data.split, [](auto v) { return detail::pick(v, detail::kSplitNames, "split scheme"); });
    }
    r.count(d, "data", "replay_batch_size", c.data.replay_batch_size, 1);
  }

  c.trigger = detail::parse_trigger(r, doc["trigger"], "trigger");

  if (const auto t = doc["training"]; r.expect_map(t, "training", {"use_previous_model", "batch_size", "epochs_per_trigger",
                                                                   "learning_rate", "shuffle", "dataloader",
                                                                   "selection_strategy"})) {
    r.flag(t, "training", "use_previous_model", c.training.use_previous_model);
    r.count(t, "training", "batch_size", c.training.batch_size, 1);
    r.count(t, "training", "epochs_per_trigger", c.training.epochs_per_trigger, 1);
    r.real(t, "training", "learning_rate", c.training.learning_rate, 0.0, std::numeric_limits<double>::max(), false, false);
    r.flag(t, "training", "shuffle", c.training.shuffle);
    const std::string lp = "training.dataloader";
    if (const auto l = t["dataloader"]; r.expect_map(l, lp, {"num_workers", "prefetched_partitions", "parallel_prefetch_requests",
                                                             "storage_threads", "storage_buffer_bytes"})) {
      r.count(l, lp, "num_workers", c.training.loader.num_workers, 1);
      r.count(l, lp, "prefetched_partitions", c.training.loader.prefetch_buffer_partitions);
      r.count(l, lp, "parallel_prefetch_requests", c.training.loader.parallel_prefetch_requests, 1);
      r.count(l, lp, "storage_threads", c.training.loader.storage_threads, 1);
      r.count(l, lp, "storage_buffer_bytes", c.training.loader.storage_buffer_bytes, 1);
    }
    const std::string sp = "training.selection_strategy";
    if (const auto s = t["selection_strategy"];
        r.expect_map(s, sp, {"storage_backend", "tail_triggers", "warmup_triggers", "partition_size", "writer_threads",
                             "presampling", "presampling_ratio", "downsampling"})) {
      r.choice(s, sp, "storage_backend", c.selection.backend,
               [](auto v) { return detail::pick(v, detail::kBackendNames, "storage backend"); });
      if (s["tail_triggers"]) {
        const auto tt = s["tail_triggers"];
        if (tt.IsNull() || (tt.IsScalar() && tt.as<std::string>() == "all")) {
          c.selection.tail_triggers = std::nullopt;
        } else {
          std::size_t v = 0;
          r.count(s, sp, "tail_triggers", v);
          c.selection.tail_triggers = v;
        }
      }
      std::size_t warmup = c.selection.warmup_triggers;
      r.count(s, sp, "warmup_triggers", warmup);
      c.selection.warmup_triggers = warmup;
      r.count(s, sp, "partition_size", c.selection.partition_size, 1);
      r.count(s, sp, "writer_threads", c.selection.writer_threads, 1);
      r.choice(s, sp, "presampling", c.selection.presampling, detail::presampling_from_string);
      r.real(s, sp, "presampling_ratio", c.selection.presampling_ratio, 0.0, 1.0, true, false);
      const std::string dp = sp + ".downsampling";
      if (const auto ds = s["downsampling"]; r.expect_map(ds, dp, {"strategy", "ratio", "mode", "period"})) {
        r.choice(ds, dp, "strategy", c.downsampling.policy, downsampling_policy_from_string);
        r.real(ds, dp, "ratio", c.downsampling.ratio, 0.0, 1.0, true, false);
        r.choice(ds, dp, "mode", c.downsampling.mode, detail::downsampling_mode_from_string);
        r.count(ds, dp, "period", c.downsampling.stb_refresh_every_epochs, 1);
        if (is_rs2(c.downsampling.policy) && c.downsampling.mode != DownsamplingMode::sample_then_batch)
          r.fail(dp + ".mode", "RS2 strategies require sample_then_batch");
      }
    }
  }

  if (const auto ms = doc["model_storage"];
      r.expect_map(ms, "model_storage", {"full_model_strategy", "incremental_model_strategy"})) {
    if (const auto f = ms["full_model_strategy"]; r.expect_map(f, "model_storage.full_model_strategy", {"name"})) {
      std::string name = "MDMWFullModel";
      r.text(f, "model_storage.full_model_strategy", "name", name);
      if (name != "MDMWFullModel") r.fail("model_storage.full_model_strategy.name", "unknown strategy '" + name + "'");
    }
    const std::string ip = "model_storage.incremental_model_strategy";
    if (const auto inc = ms["incremental_model_strategy"]; r.expect_map(inc, ip, {"name", "operator", "full_model_interval"})) {
      std::string name = "WeightsDifference";
      r.text(inc, ip, "name", name);
      if (name != "WeightsDifference") r.fail(ip + ".name", "unknown strategy '" + name + "'");
      r.choice(inc, ip, "operator", c.model_storage.op, delta_operator_from_string);
      r.count(inc, ip, "full_model_interval", c.model_storage.full_every, 1);
    }
  }

  if (const auto e = doc["evaluation"]; r.expect_map(e, "evaluation", {"intervals", "metrics", "skip_policy", "undefined_trained_model"})) {
    const std::string ipath = "evaluation.intervals";
    if (const auto iv = e["intervals"]; r.expect_map(iv, ipath, {"kind", "length", "stride", "anchor"})) {
      r.choice(iv, ipath, "kind", c.evaluation.intervals.kind, [](auto v) { return detail::pick(v, detail::kIntervalNames, "interval kind"); });
      r.integer(iv, ipath, "length", c.evaluation.intervals.length, 1);
      r.integer(iv, ipath, "stride", c.evaluation.intervals.stride, 1);
      r.choice(iv, ipath, "anchor", c.evaluation.intervals.anchor, [](auto v) { return detail::pick(v, detail::kAnchorNames, "anchor"); });
    }
    if (const auto ml = e["metrics"]; ml && !ml.IsNull()) {
      if (!ml.IsSequence() || ml.size() == 0) {
        r.fail("evaluation.metrics", "expected a non-empty list");
      } else {
        c.evaluation.metrics.clear();
        for (std::size_t i = 0; i < ml.size(); ++i) {
          const auto p = "evaluation.metrics[" + std::to_string(i) + "]";
          try {
            const auto m = metric_from_string(ml[i].as<std::string>());
            if (m.kind == MetricKind::top_k_accuracy && m.k > c.num_classes) r.fail(p, "top-k needs k <= num_classes");
            c.evaluation.metrics.push_back(m);
          } catch (const std::exception& ex) {
            r.fail(p, ex.what());
          }
        }
      }
    }
    r.choice(e, "evaluation", "skip_policy", c.evaluation.skip, [](auto v) { return detail::pick(v, detail::kSkipNames, "skip policy"); });
    r.choice(e, "evaluation", "undefined_trained_model", c.evaluation.undefined_trained,
             [](auto v) { return detail::pick(v, detail::kUndefinedNames, "undefined-trained rule"); });
  }

  if (!r.issues.empty()) throw ConfigError(std::move(r.issues));
  return c;
}

inline PipelineConfig parse_config_text(const std::string& text) {
  YAML::Node doc;
  try {
    doc = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw ConfigError("", std::string("malformed document: ") + e.what());
  }
  return parse_config(doc);
}

inline PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io, "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

/// Normalized document with every default materialized.
inline std::string dump_config(const PipelineConfig& c) {
  YAML::Emitter out;
  out.SetDoublePrecision(17);
  out << YAML::BeginMap;
  out << YAML::Key << "pipeline" << YAML::Value << YAML::BeginMap << YAML::Key << "name" << YAML::Value << c.pipeline_id
      << YAML::EndMap;
  out << YAML::Key << "seed" << YAML::Value << c.seed;
  out << YAML::Key << "model" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "id" << YAML::Value << "LogisticRegression";
  out << YAML::Key << "config" << YAML::Value << YAML::BeginMap << YAML::Key << "num_features" << YAML::Value
      << c.feature_dim << YAML::Key << "num_classes" << YAML::Value << c.num_classes << YAML::EndMap;
  out << YAML::EndMap;

  out << YAML::Key << "data" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "dataset_id" << YAML::Value << c.data.dataset;
  out << YAML::Key << "bytes_parser_function" << YAML::Value << c.data.bytes_parser;
  out << YAML::Key << "split" << YAML::Value << YAML::BeginMap << YAML::Key << "eval_fraction" << YAML::Value
      << c.data.eval_fraction << YAML::Key << "scheme" << YAML::Value
      << std::string(detail::name_of(c.data.split, detail::kSplitNames)) << YAML::EndMap;
  out << YAML::Key << "replay_batch_size" << YAML::Value << c.data.replay_batch_size;
  out << YAML::EndMap;

  out << YAML::Key << "trigger" << YAML::Value << YAML::BeginMap;
  if (const auto* a = std::get_if<AmountTrigger>(&c.trigger)) {
    out << YAML::Key << "id" << YAML::Value << "DataAmountTrigger" << YAML::Key << "num_samples" << YAML::Value << a->num_samples;
  } else if (const auto* t = std::get_if<TimeTrigger>(&c.trigger)) {
    out << YAML::Key << "id" << YAML::Value << "TimeTrigger" << YAML::Key << "every" << YAML::Value << t->interval;
  } else if (const auto* p = std::get_if<PerformanceTrigger>(&c.trigger)) {
    out << YAML::Key << "id" << YAML::Value << "PerformanceTrigger" << YAML::Key << "metric" << YAML::Value << "accuracy"
        << YAML::Key << "threshold" << YAML::Value << p->threshold << YAML::Key << "window_size" << YAML::Value
        << p->window_size << YAML::Key << "warmup_samples" << YAML::Value << p->warmup_samples << YAML::Key
        << "min_interval" << YAML::Value << p->min_interval;
  } else {
    const auto& d = std::get<DriftTrigger>(c.trigger);
    out << YAML::Key << "id" << YAML::Value << "DataDriftTrigger";
    out << YAML::Key << "detection_interval" << YAML::Value << d.drift.detection_interval;
    out << YAML::Key << "window_size" << YAML::Value << d.drift.window_size;
    out << YAML::Key << "window_kind" << YAML::Value << std::string(detail::name_of(d.drift.window_kind, detail::kWindowNames));
    out << YAML::Key << "kernel_bandwidth" << YAML::Value;
    if (d.drift.kernel_bandwidth) out << *d.drift.kernel_bandwidth;
    else out << "median_heuristic";
    out << YAML::Key << "decision" << YAML::Value << YAML::BeginMap;
    if (const auto* td = std::get_if<ThresholdDecision>(&d.drift.decision)) {
      out << YAML::Key << "id" << YAML::Value << "ThresholdDecision" << YAML::Key << "threshold" << YAML::Value << td->threshold;
    } else {
      const auto& pd = std::get<PercentileDecision>(d.drift.decision);
      out << YAML::Key << "id" << YAML::Value << "PercentileDecision" << YAML::Key << "history_len" << YAML::Value
          << pd.history_len << YAML::Key << "percentile" << YAML::Value << pd.percentile;
    }
    out << YAML::EndMap;
    out << YAML::Key << "use_pca" << YAML::Value << d.drift.use_pca;
    out << YAML::Key << "pca_dims" << YAML::Value << d.drift.pca_dims;
    out << YAML::Key << "embedding" << YAML::Value << std::string(detail::name_of(d.embedding, detail::kEmbeddingNames));
    out << YAML::Key << "warmup_samples" << YAML::Value << d.warmup_samples;
    out << YAML::Key << "min_interval_during_warmup" << YAML::Value << d.min_interval_during_warmup;
  }
  out << YAML::EndMap;

  const auto& t = c.training;
  out << YAML::Key << "training" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "use_previous_model" << YAML::Value << t.use_previous_model;
  out << YAML::Key << "batch_size" << YAML::Value << t.batch_size;
  out << YAML::Key << "epochs_per_trigger" << YAML::Value << t.epochs_per_trigger;
  out << YAML::Key << "learning_rate" << YAML::Value << t.learning_rate;
  out << YAML::Key << "shuffle" << YAML::Value << t.shuffle;
  out << YAML::Key << "dataloader" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "num_workers" << YAML::Value << t.loader.num_workers;
  out << YAML::Key << "prefetched_partitions" << YAML::Value << t.loader.prefetch_buffer_partitions;
  out << YAML::Key << "parallel_prefetch_requests" << YAML::Value << t.loader.parallel_prefetch_requests;
  out << YAML::Key << "storage_threads" << YAML::Value << t.loader.storage_threads;
  out << YAML::Key << "storage_buffer_bytes" << YAML::Value << t.loader.storage_buffer_bytes;
  out << YAML::EndMap;
  const auto& s = c.selection;
  out << YAML::Key << "selection_strategy" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "storage_backend" << YAML::Value << std::string(detail::name_of(s.backend, detail::kBackendNames));
  out << YAML::Key << "tail_triggers" << YAML::Value;
  if (s.tail_triggers) out << *s.tail_triggers;
  else out << "all";
  out << YAML::Key << "warmup_triggers" << YAML::Value << s.warmup_triggers;
  out << YAML::Key << "partition_size" << YAML::Value << s.partition_size;
  out << YAML::Key << "writer_threads" << YAML::Value << s.writer_threads;
  out << YAML::Key << "presampling" << YAML::Value << to_string(s.presampling);
  out << YAML::Key << "presampling_ratio" << YAML::Value << s.presampling_ratio;
  out << YAML::Key << "downsampling" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "strategy" << YAML::Value << to_string(c.downsampling.policy);
  out << YAML::Key << "ratio" << YAML::Value << c.downsampling.ratio;
  out << YAML::Key << "mode" << YAML::Value << detail::to_string(c.downsampling.mode);
  out << YAML::Key << "period" << YAML::Value << c.downsampling.stb_refresh_every_epochs;
  out << YAML::EndMap << YAML::EndMap << YAML::EndMap;

  out << YAML::Key << "model_storage" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "full_model_strategy" << YAML::Value << YAML::BeginMap << YAML::Key << "name" << YAML::Value
      << "MDMWFullModel" << YAML::EndMap;
  out << YAML::Key << "incremental_model_strategy" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "name" << YAML::Value << "WeightsDifference";
  out << YAML::Key << "operator" << YAML::Value << to_string(c.model_storage.op);
  out << YAML::Key << "full_model_interval" << YAML::Value << c.model_storage.full_every;
  out << YAML::EndMap << YAML::EndMap;

  const auto& e = c.evaluation;
  out << YAML::Key << "evaluation" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "intervals" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "kind" << YAML::Value << std::string(detail::name_of(e.intervals.kind, detail::kIntervalNames));
  out << YAML::Key << "length" << YAML::Value << e.intervals.length;
  out << YAML::Key << "stride" << YAML::Value << e.intervals.stride;
  out << YAML::Key << "anchor" << YAML::Value << std::string(detail::name_of(e.intervals.anchor, detail::kAnchorNames));
  out << YAML::EndMap;
  out << YAML::Key << "metrics" << YAML::Value << YAML::BeginSeq;
  for (const auto& m : e.metrics) out << m.id();
  out << YAML::EndSeq;
  out << YAML::Key << "skip_policy" << YAML::Value << std::string(detail::name_of(e.skip, detail::kSkipNames));
  out << YAML::Key << "undefined_trained_model" << YAML::Value
      << std::string(detail::name_of(e.undefined_trained, detail::kUndefinedNames));
  out << YAML::EndMap;
  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

}  // namespace ctflow

#endif  // CTFLOW_CONFIG_HPP
