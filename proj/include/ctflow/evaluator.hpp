#ifndef CTFLOW_EVALUATOR_HPP
#define CTFLOW_EVALUATOR_HPP

// Temporal evaluation: interval generation, the model x interval matrix,
// composite models, the pipeline score and cost/accuracy feasible sets.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ctflow/core.hpp"
#include "ctflow/learner.hpp"
#include "ctflow/storage.hpp"

namespace ctflow {

struct EvaluationInterval {
  std::int64_t start = 0;
  std::int64_t anchor = 0;
  std::int64_t end = 0;

  friend bool operator==(const EvaluationInterval&, const EvaluationInterval&) = default;
};

enum class IntervalKind { tumbling, sliding };
enum class AnchorPlacement { start, center };

struct IntervalSpec {
  IntervalKind kind = IntervalKind::tumbling;
  std::int64_t length = 1;
  std::int64_t stride = 1;  // sliding only
  AnchorPlacement anchor = AnchorPlacement::start;

  friend bool operator==(const IntervalSpec&, const IntervalSpec&) = default;
};

inline std::int64_t place_anchor(std::int64_t s, std::int64_t e, AnchorPlacement a) {
  return a == AnchorPlacement::start ? s : s + (e - s) / 2;
}

/// Intervals over [t0, t1). Tumbling windows are clipped at t1; sliding
/// windows keep their full width.
inline std::vector<EvaluationInterval> generate_intervals(const IntervalSpec& spec, std::int64_t t0, std::int64_t t1) {
  if (spec.length <= 0) throw Error(Errc::invalid_argument, "interval length must be positive");
  if (spec.kind == IntervalKind::sliding && spec.stride <= 0) throw Error(Errc::invalid_argument, "interval stride must be positive");
  if (t0 >= t1) throw Error(Errc::invalid_argument, "interval range is empty (t0 >= t1)");
  std::vector<EvaluationInterval> out;
  const std::int64_t step = spec.kind == IntervalKind::tumbling ? spec.length : spec.stride;
  for (std::int64_t s = t0; s < t1; s += step) {
    const std::int64_t e = spec.kind == IntervalKind::tumbling ? std::min(s + spec.length, t1) : s + spec.length;
    out.push_back({s, place_anchor(s, e, spec.anchor), e});
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.anchor < b.anchor; });
  return out;
}

/// Eval split held in memory, ordered by timestamp.
struct EvalSet {
  Matrix features;
  std::vector<std::int64_t> labels;
  std::vector<std::int64_t> timestamps;

  std::size_t size() const { return labels.size(); }

  /// Index range of samples with timestamp in [s, e) or [s, e].
  std::pair<std::size_t, std::size_t> range(std::int64_t s, std::int64_t e, bool closed_end) const {
    const auto lo = std::lower_bound(timestamps.begin(), timestamps.end(), s);
    const auto hi = closed_end ? std::upper_bound(timestamps.begin(), timestamps.end(), e)
                               : std::lower_bound(timestamps.begin(), timestamps.end(), e);
    const auto a = static_cast<std::size_t>(lo - timestamps.begin());
    const auto b = static_cast<std::size_t>(hi - timestamps.begin());
    return {a, std::max(a, b)};
  }

  static EvalSet from_store(const SampleStore& store, std::span<const std::uint64_t> keys, std::size_t feature_dim) {
    std::vector<std::uint64_t> ordered(keys.begin(), keys.end());
    std::sort(ordered.begin(), ordered.end(), [&](auto a, auto b) {
      const auto ta = store.entry(a).timestamp, tb = store.entry(b).timestamp;
      return ta != tb ? ta < tb : a < b;
    });
    EvalSet out;
    out.features = Matrix(ordered.size(), feature_dim);
    for (std::size_t i = 0; i < ordered.size(); ++i) {
      const auto s = store.read_sample(ordered[i]);
      parse_f32_features(s.payload, out.features.row(i));
      out.labels.push_back(s.label);
      out.timestamps.push_back(s.timestamp);
    }
    return out;
  }
};

enum class MetricKind { accuracy, top_k_accuracy, weighted_f1 };

struct Metric {
  MetricKind kind = MetricKind::accuracy;
  std::size_t k = 1;

  std::string id() const {
    switch (kind) {
      case MetricKind::accuracy: return "accuracy";
      case MetricKind::top_k_accuracy: return "top" + std::to_string(k) + "_accuracy";
      case MetricKind::weighted_f1: return "weighted_f1";
    }
    return "unknown";
  }

  friend bool operator==(const Metric&, const Metric&) = default;
};

inline Metric metric_from_string(std::string_view s) {
  if (s == "accuracy") return {MetricKind::accuracy, 1};
  if (s == "weighted_f1") return {MetricKind::weighted_f1, 1};
  if (s.starts_with("top") && s.ends_with("_accuracy")) {
    const auto digits = s.substr(3, s.size() - 3 - 9);
    if (!digits.empty() && std::all_of(digits.begin(), digits.end(), [](char c) { return c >= '0' && c <= '9'; })) {
      const auto k = std::stoul(std::string(digits));
      if (k > 0) return {MetricKind::top_k_accuracy, k};
    }
  }
  throw Error(Errc::invalid_argument, "unknown metric '" + std::string(s) + "'");
}

/// Metric over rows [first, last) of the eval set; nullopt when empty.
inline std::optional<double> evaluate_rows(const LogisticRegression& model, const EvalSet& eval, std::size_t first,
                                           std::size_t last, const Metric& metric) {
  if (first >= last) return std::nullopt;
  const std::size_t classes = model.num_classes();
  if (metric.kind == MetricKind::top_k_accuracy && (metric.k == 0 || metric.k > classes))
    throw Error(Errc::invalid_argument, "top-k metric needs 1 <= k <= num_classes");
  std::vector<double> p(classes);
  std::size_t hits = 0;
  std::vector<std::size_t> tp(classes, 0), predicted(classes, 0), support(classes, 0);
  for (std::size_t i = first; i < last; ++i) {
    const auto x = eval.features.row(i);
    const auto y = eval.labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= classes) throw Error(Errc::invalid_argument, "eval label out of range");
    const auto truth = static_cast<std::size_t>(y);
    if (metric.kind == MetricKind::top_k_accuracy) {
      model.logits(x, p);
      // rank of the true class: classes scoring higher, ties broken by index
      std::size_t ahead = 0;
      for (std::size_t c = 0; c < classes; ++c)
        if (p[c] > p[truth] || (p[c] == p[truth] && c < truth)) ++ahead;
      hits += ahead < metric.k ? 1 : 0;
      continue;
    }
    const auto pred = model.predict(x);
    hits += pred == truth ? 1 : 0;
    ++support[truth];
    ++predicted[pred];
    if (pred == truth) ++tp[truth];
  }
  const double n = static_cast<double>(last - first);
  if (metric.kind != MetricKind::weighted_f1) return static_cast<double>(hits) / n;
  double f1 = 0.0;
  for (std::size_t c = 0; c < classes; ++c) {
    if (support[c] == 0) continue;
    const double denom = static_cast<double>(predicted[c] + support[c]);
    f1 += static_cast<double>(support[c]) * (2.0 * static_cast<double>(tp[c]) / denom);
  }
  return f1 / n;
}

/// Score on samples with timestamp in [start, end), or [start, end] when
/// `closed_end` (the final interval of a sequence).
inline std::optional<double> evaluate_model(const LogisticRegression& model, const EvaluationInterval& interval,
                                            const EvalSet& eval, const Metric& metric, bool closed_end = false) {
  const auto [a, b] = eval.range(interval.start, interval.end, closed_end);
  return evaluate_rows(model, eval, a, b, metric);
}

struct EvaluationMatrix {
  std::string metric;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::optional<double>> cells;

  const std::optional<double>& at(std::size_t i, std::size_t j) const { return cells[i * cols + j]; }
  std::optional<double>& at(std::size_t i, std::size_t j) { return cells[i * cols + j]; }
};

inline EvaluationMatrix build_matrix(std::span<const LogisticRegression> models,
                                     std::span<const EvaluationInterval> intervals, const EvalSet& eval,
                                     const Metric& metric) {
  if (models.empty() || intervals.empty()) throw Error(Errc::invalid_argument, "matrix needs at least one model and interval");
  EvaluationMatrix m{metric.id(), models.size(), intervals.size(), {}};
  m.cells.resize(m.rows * m.cols);
  for (std::size_t j = 0; j < intervals.size(); ++j) {
    const bool last = j + 1 == intervals.size();
    const auto [a, b] = eval.range(intervals[j].start, intervals[j].end, last);
    for (std::size_t i = 0; i < models.size(); ++i) m.at(i, j) = evaluate_rows(models[i], eval, a, b, metric);
  }
  return m;
}

enum class CompositeVariant { currently_active, currently_trained };
enum class UndefinedTrained { first_model, last_model };

inline const char* to_string(CompositeVariant v) {
  return v == CompositeVariant::currently_active ? "currently_active" : "currently_trained";
}

using CompositeMapping = std::vector<std::optional<std::size_t>>;

/// active(j) = last model with t^e <= anchor(j); trained(j) = active(j) + 1
/// clamped to the last model. Where no model is active, trained maps to the
/// first model (or the last one with UndefinedTrained::last_model).
inline CompositeMapping composite_mapping(std::span<const std::int64_t> model_ends,
                                          std::span<const EvaluationInterval> intervals, CompositeVariant variant,
                                          UndefinedTrained undefined = UndefinedTrained::first_model) {
  if (model_ends.empty()) throw Error(Errc::invalid_argument, "composite model needs at least one model");
  if (!std::is_sorted(model_ends.begin(), model_ends.end()))
    throw Error(Errc::invalid_argument, "models must be ordered by completion time");
  const std::size_t m = model_ends.size();
  CompositeMapping out(intervals.size());
  for (std::size_t j = 0; j < intervals.size(); ++j) {
    const auto count = static_cast<std::size_t>(
        std::upper_bound(model_ends.begin(), model_ends.end(), intervals[j].anchor) - model_ends.begin());
    if (variant == CompositeVariant::currently_active) {
      if (count > 0) out[j] = count - 1;
    } else if (count > 0) {
      out[j] = std::min(count, m - 1);
    } else {
      out[j] = undefined == UndefinedTrained::first_model ? 0 : m - 1;
    }
  }
  return out;
}

using CompositeSeries = std::vector<std::optional<double>>;

inline CompositeSeries composite_series(const EvaluationMatrix& matrix, const CompositeMapping& mapping) {
  if (mapping.size() != matrix.cols) throw Error(Errc::shape_mismatch, "mapping length differs from interval count");
  CompositeSeries out(mapping.size());
  for (std::size_t j = 0; j < mapping.size(); ++j) {
    if (!mapping[j]) continue;
    if (*mapping[j] >= matrix.rows) throw Error(Errc::shape_mismatch, "mapping refers to a missing model row");
    out[j] = matrix.at(*mapping[j], j);
  }
  return out;
}

/// Mean of the defined entries at or after `cutoff`.
inline double pipeline_score(const CompositeSeries& series, std::size_t cutoff = 0) {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t j = cutoff; j < series.size(); ++j)
    if (series[j]) {
      sum += *series[j];
      ++n;
    }
  if (n == 0) throw Error(Errc::validation, "pipeline score undefined: every interval was skipped");
  return sum / static_cast<double>(n);
}

/// First interval index whose anchor follows every pipeline's first model.
inline std::size_t first_common_trigger_cutoff(std::span<const std::int64_t> first_model_ends,
                                               std::span<const EvaluationInterval> intervals) {
  if (first_model_ends.empty()) return 0;
  const auto latest = *std::max_element(first_model_ends.begin(), first_model_ends.end());
  std::size_t j = 0;
  while (j < intervals.size() && intervals[j].anchor < latest) ++j;
  return j;
}

struct FeasibleInput {
  std::string pipeline;
  double score = 0.0;
  double cost = 0.0;
  std::string evaluation_key;  // runs must agree on dataset, split and intervals
};

struct FeasiblePoint {
  std::string pipeline;
  double score = 0.0;
  double cost = 0.0;
  bool pareto = false;
};

/// One point per pipeline, sorted by cost; a point is Pareto-optimal when no
/// other point has cost <= and score >= with at least one strict.
inline std::vector<FeasiblePoint> feasible_set(std::span<const FeasibleInput> runs) {
  std::vector<FeasiblePoint> out;
  for (const auto& r : runs) {
    if (r.evaluation_key != runs.front().evaluation_key)
      throw Error(Errc::validation, "pipeline '" + r.pipeline + "' was evaluated under a different evaluation spec");
    out.push_back({r.pipeline, r.score, r.cost, true});
  }
  for (auto& p : out)
    for (const auto& q : out) {
      const bool weakly = q.cost <= p.cost && q.score >= p.score;
      const bool strictly = q.cost < p.cost || q.score > p.score;
      if (weakly && strictly) {
        p.pareto = false;
        break;
      }
    }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    if (a.cost != b.cost) return a.cost < b.cost;
    if (a.score != b.score) return a.score > b.score;
    return a.pipeline < b.pipeline;
  });
  return out;
}

}  // namespace ctflow

#endif  // CTFLOW_EVALUATOR_HPP
