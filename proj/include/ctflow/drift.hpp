#ifndef CTFLOW_DRIFT_HPP
#define CTFLOW_DRIFT_HPP

// Embedding-space drift detection: MMD between a reference window and the
// current window, turned into trigger decisions by a threshold or by
// outlier detection over recent scores (AutoDrift).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "ctflow/core.hpp"
#include "ctflow/learner.hpp"

namespace ctflow {

/// Pre-softmax logits of the model; raw features when no model exists yet.
inline Matrix embed(const LogisticRegression* model, const Matrix& features) {
  if (model == nullptr) return features;
  if (features.cols != model->num_features())
    throw Error(Errc::shape_mismatch, "embedding input has " + std::to_string(features.cols) + " columns, model expects " +
                                          std::to_string(model->num_features()));
  return model->logits(features);
}

// ---------------------------------------------------------------------------
// PCA by deflated power iteration

struct PcaResult {
  Matrix components;  // dims x d, orthonormal rows
  std::vector<double> mean;
  std::vector<double> eigenvalues;
  Matrix projected;  // n x dims

  Matrix project(const Matrix& x) const {
    Matrix out(x.rows, components.rows);
    for (std::size_t i = 0; i < x.rows; ++i)
      for (std::size_t k = 0; k < components.rows; ++k) {
        double s = 0.0;
        for (std::size_t j = 0; j < x.cols; ++j) s += (x(i, j) - mean[j]) * components(k, j);
        out(i, k) = s;
      }
    return out;
  }
};

inline PcaResult pca_fit_project(const Matrix& x, std::size_t dims, double tolerance = 1e-10,
                                 std::size_t max_iterations = 10000) {
  const std::size_t n = x.rows, d = x.cols;
  if (n < 2) throw Error(Errc::invalid_argument, "PCA needs at least two rows");
  if (dims == 0 || dims > d)
    throw Error(Errc::invalid_argument, "PCA dims " + std::to_string(dims) + " outside [1, " + std::to_string(d) + "]");

  PcaResult r;
  r.mean.assign(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) r.mean[j] += x(i, j);
  for (auto& m : r.mean) m /= static_cast<double>(n);

  Matrix cov(d, d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t a = 0; a < d; ++a) {
      const double da = x(i, a) - r.mean[a];
      for (std::size_t b = a; b < d; ++b) cov(a, b) += da * (x(i, b) - r.mean[b]);
    }
  double trace = 0.0;
  for (std::size_t a = 0; a < d; ++a) {
    for (std::size_t b = a; b < d; ++b) {
      cov(a, b) /= static_cast<double>(n - 1);
      cov(b, a) = cov(a, b);
    }
    trace += cov(a, a);
  }

  r.components = Matrix(dims, d);
  std::vector<double> v(d), w(d);
  for (std::size_t k = 0; k < dims; ++k) {
    for (std::size_t j = 0; j < d; ++j) v[j] = 1.0 + 0.1 * static_cast<double>(j) + 0.01 * static_cast<double>(k);
    auto orthogonalize = [&](std::vector<double>& u) {
      for (std::size_t p = 0; p < k; ++p) {
        double dot = 0.0;
        for (std::size_t j = 0; j < d; ++j) dot += u[j] * r.components(p, j);
        for (std::size_t j = 0; j < d; ++j) u[j] -= dot * r.components(p, j);
      }
      double norm = 0.0;
      for (double e : u) norm += e * e;
      norm = std::sqrt(norm);
      if (norm > 0.0)
        for (auto& e : u) e /= norm;
      return norm;
    };
    orthogonalize(v);
    double lambda = 0.0;
    for (std::size_t it = 0; it < max_iterations; ++it) {
      for (std::size_t a = 0; a < d; ++a) {
        double s = 0.0;
        for (std::size_t b = 0; b < d; ++b) s += cov(a, b) * v[b];
        w[a] = s;
      }
      const double norm = orthogonalize(w);
      lambda = norm;
      if (norm == 0.0) break;
      double diff = 0.0;
      for (std::size_t j = 0; j < d; ++j) diff = std::max(diff, std::abs(w[j] - v[j]));
      v = w;
      if (diff < tolerance) break;
    }
    if (lambda <= 1e-12 * std::max(trace, 1e-300))
      throw Error(Errc::invalid_argument, "data rank " + std::to_string(k) + " is below requested PCA dims " + std::to_string(dims));
    // Rayleigh quotient as the eigenvalue estimate
    double rq = 0.0;
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b < d; ++b) rq += v[a] * cov(a, b) * v[b];
    std::size_t largest = 0;
    for (std::size_t j = 1; j < d; ++j)
      if (std::abs(v[j]) > std::abs(v[largest])) largest = j;
    const double sign = v[largest] < 0.0 ? -1.0 : 1.0;
    for (std::size_t j = 0; j < d; ++j) r.components(k, j) = sign * v[j];
    r.eigenvalues.push_back(rq);
  }
  r.projected = r.project(x);
  return r;
}

// ---------------------------------------------------------------------------
// MMD

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

/// Median pairwise Euclidean distance over the union of X and Y; 1 when all points coincide.
inline double median_heuristic_bandwidth(const Matrix& x, const Matrix& y) {
  std::vector<std::span<const double>> pts;
  for (std::size_t i = 0; i < x.rows; ++i) pts.push_back(x.row(i));
  for (std::size_t i = 0; i < y.rows; ++i) pts.push_back(y.row(i));
  std::vector<double> dist;
  dist.reserve(pts.size() * (pts.size() - 1) / 2);
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (std::size_t j = i + 1; j < pts.size(); ++j) dist.push_back(std::sqrt(squared_distance(pts[i], pts[j])));
  if (dist.empty()) return 1.0;
  const auto mid = dist.begin() + static_cast<std::ptrdiff_t>(dist.size() / 2);
  std::nth_element(dist.begin(), mid, dist.end());
  double med = *mid;
  if (dist.size() % 2 == 0) {
    const double lower = *std::max_element(dist.begin(), mid);
    med = 0.5 * (med + lower);
  }
  return med > 0.0 ? med : 1.0;
}

/// nullopt selects the median heuristic.
using Bandwidth = std::optional<double>;

/// Biased (V-statistic) MMD^2 with the Gaussian kernel exp(-|a-b|^2 / (2h^2)), clamped at 0.
inline double mmd2(const Matrix& x, const Matrix& y, Bandwidth bandwidth = std::nullopt) {
  if (x.rows < 2 || y.rows < 2) throw Error(Errc::invalid_argument, "MMD windows need at least two rows each");
  if (x.cols != y.cols) throw Error(Errc::shape_mismatch, "MMD windows have different widths");
  const double h = bandwidth ? *bandwidth : median_heuristic_bandwidth(x, y);
  if (!(h > 0.0)) throw Error(Errc::invalid_argument, "kernel bandwidth must be positive");
  const double gamma = 1.0 / (2.0 * h * h);

  // Rows are summed in lexicographic order so the estimate depends only on the
  // multisets: identical windows give exactly 0 and row permutations are exact no-ops.
  auto sorted_rows = [](const Matrix& m) {
    std::vector<std::span<const double>> rows;
    rows.reserve(m.rows);
    for (std::size_t i = 0; i < m.rows; ++i) rows.push_back(m.row(i));
    std::sort(rows.begin(), rows.end(), [](auto a, auto b) {
      return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
    });
    return rows;
  };
  const auto xs = sorted_rows(x), ys = sorted_rows(y);
  auto kernel_mean = [&](const std::vector<std::span<const double>>& a, const std::vector<std::span<const double>>& b) {
    double s = 0.0;
    for (const auto& ra : a)
      for (const auto& rb : b) s += std::exp(-gamma * squared_distance(ra, rb));
    return s / (static_cast<double>(a.size()) * static_cast<double>(b.size()));
  };
  const double v = kernel_mean(xs, xs) + kernel_mean(ys, ys) - 2.0 * kernel_mean(xs, ys);
  return v > 0.0 ? v : 0.0;
}

// ---------------------------------------------------------------------------
// Decisions

struct ThresholdDecision {
  double threshold = 0.05;
};

/// Fires when a score lies in the top `percentile` of the last `history_len` scores.
struct PercentileDecision {
  std::size_t history_len = 15;
  double percentile = 0.05;
};

using DriftDecision = std::variant<ThresholdDecision, PercentileDecision>;

struct DecisionState {
  std::deque<double> history;
};

/// Value at index ceil((1 - p)(n - 1)) of the ascending history.
inline double history_quantile(const std::deque<double>& history, double percentile) {
  std::vector<double> sorted(history.begin(), history.end());
  std::sort(sorted.begin(), sorted.end());
  const double pos = (1.0 - percentile) * static_cast<double>(sorted.size() - 1);
  auto idx = static_cast<std::size_t>(std::ceil(pos - 1e-9));
  idx = std::min(idx, sorted.size() - 1);
  return sorted[idx];
}

inline bool decide(DecisionState& state, double score, const DriftDecision& decision) {
  if (const auto* t = std::get_if<ThresholdDecision>(&decision)) return score > t->threshold;
  const auto& p = std::get<PercentileDecision>(decision);
  bool fire = false;
  if (p.history_len > 0 && state.history.size() >= p.history_len) fire = score > history_quantile(state.history, p.percentile);
  state.history.push_back(score);
  while (state.history.size() > p.history_len) state.history.pop_front();
  return fire;
}

// ---------------------------------------------------------------------------
// Windows

enum class WindowKind { samples, seconds };

struct DriftConfig {
  std::size_t detection_interval = 250;
  std::size_t window_size = 250;  // samples, or seconds for time windows
  WindowKind window_kind = WindowKind::samples;
  Bandwidth kernel_bandwidth;  // nullopt: median heuristic
  DriftDecision decision = PercentileDecision{};
  bool use_pca = false;
  std::size_t pca_dims = 2;

  void validate() const {
    if (detection_interval == 0) throw Error(Errc::invalid_argument, "detection_interval must be >= 1");
    if (window_size == 0) throw Error(Errc::invalid_argument, "window_size must be positive");
    if (kernel_bandwidth && !(*kernel_bandwidth > 0.0)) throw Error(Errc::invalid_argument, "kernel_bandwidth must be positive");
    if (use_pca && pca_dims == 0) throw Error(Errc::invalid_argument, "pca_dims must be positive");
  }
};

/// Reference and current windows over raw feature rows. Rows are embedded
/// with whatever model is current at evaluation time.
class DriftDetector {
 public:
  explicit DriftDetector(DriftConfig config) : config_(std::move(config)) { config_.validate(); }

  /// Adds one sample; returns true when an evaluation is due.
  bool observe(std::span<const double> features, std::int64_t timestamp) {
    current_.push_back({timestamp, std::vector<double>(features.begin(), features.end())});
    if (config_.window_kind == WindowKind::samples) {
      while (current_.size() > config_.window_size) current_.pop_front();
    } else {
      const auto span = static_cast<std::int64_t>(config_.window_size);
      while (!current_.empty() && current_.front().timestamp <= timestamp - span) current_.pop_front();
    }
    if (!reference_) {
      // the first complete window becomes the initial reference
      const bool complete = config_.window_kind == WindowKind::samples
                                ? current_.size() >= config_.window_size
                                : timestamp - first_timestamp_.value_or(timestamp) >= static_cast<std::int64_t>(config_.window_size);
      if (!first_timestamp_) first_timestamp_ = timestamp;
      if (complete) {
        reset_reference();
        samples_since_evaluation_ = 0;
        return false;
      }
    }
    ++samples_since_evaluation_;
    return reference_ && samples_since_evaluation_ >= config_.detection_interval;
  }

  /// MMD^2 between the embedded windows; nullopt when a window is too small.
  std::optional<double> score(const LogisticRegression* model) {
    samples_since_evaluation_ = 0;
    if (!reference_ || reference_->rows < 2 || current_.size() < 2) return std::nullopt;
    auto ref = embed(model, *reference_);
    auto cur = embed(model, current_matrix());
    if (config_.use_pca) {
      Matrix both = ref;
      for (std::size_t i = 0; i < cur.rows; ++i) both.append_row(cur.row(i));
      const auto pca = pca_fit_project(both, std::min(config_.pca_dims, both.cols));
      ref = pca.project(ref);
      cur = pca.project(cur);
    }
    return mmd2(ref, cur, config_.kernel_bandwidth);
  }

  bool decide(double score) { return ctflow::decide(decision_state_, score, config_.decision); }

  /// The current window becomes the reference (called on every trigger).
  void reset_reference() { reference_ = current_matrix(); }

  bool has_reference() const { return reference_.has_value(); }
  std::size_t current_size() const { return current_.size(); }
  const DecisionState& decision_state() const { return decision_state_; }
  const DriftConfig& config() const { return config_; }

 private:
  struct Row {
    std::int64_t timestamp;
    std::vector<double> values;
  };

  Matrix current_matrix() const {
    Matrix m;
    for (const auto& r : current_) m.append_row(r.values);
    return m;
  }

  DriftConfig config_;
  std::deque<Row> current_;
  std::optional<Matrix> reference_;
  std::optional<std::int64_t> first_timestamp_;
  std::size_t samples_since_evaluation_ = 0;
  DecisionState decision_state_;
};

}  // namespace ctflow

#endif  // CTFLOW_DRIFT_HPP
