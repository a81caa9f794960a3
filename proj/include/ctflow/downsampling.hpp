#ifndef CTFLOW_DOWNSAMPLING_HPP
#define CTFLOW_DOWNSAMPLING_HPP

// Model-informed data selection: per-sample scores from the forward pass and
// the batch-then-sample / sample-then-batch selection rules.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ctflow/core.hpp"
#include "ctflow/learner.hpp"

namespace ctflow {

enum class DownsamplingPolicy {
  none,
  loss,
  grad_norm,
  margin,
  least_confidence,
  entropy,
  rs2_with_replacement,
  rs2_without_replacement,
};

enum class DownsamplingMode { sample_then_batch, batch_then_sample };

inline const char* to_string(DownsamplingPolicy p) {
  switch (p) {
    case DownsamplingPolicy::none: return "none";
    case DownsamplingPolicy::loss: return "loss";
    case DownsamplingPolicy::grad_norm: return "grad_norm";
    case DownsamplingPolicy::margin: return "margin";
    case DownsamplingPolicy::least_confidence: return "least_confidence";
    case DownsamplingPolicy::entropy: return "entropy";
    case DownsamplingPolicy::rs2_with_replacement: return "rs2_with_replacement";
    case DownsamplingPolicy::rs2_without_replacement: return "rs2_without_replacement";
  }
  return "unknown";
}

inline DownsamplingPolicy downsampling_policy_from_string(std::string_view s) {
  for (auto p : {DownsamplingPolicy::none, DownsamplingPolicy::loss, DownsamplingPolicy::grad_norm,
                 DownsamplingPolicy::margin, DownsamplingPolicy::least_confidence, DownsamplingPolicy::entropy,
                 DownsamplingPolicy::rs2_with_replacement, DownsamplingPolicy::rs2_without_replacement})
    if (s == to_string(p)) return p;
  throw Error(Errc::invalid_argument, "unknown downsampling policy '" + std::string(s) + "'");
}

inline bool is_rs2(DownsamplingPolicy p) {
  return p == DownsamplingPolicy::rs2_with_replacement || p == DownsamplingPolicy::rs2_without_replacement;
}

struct DownsamplingConfig {
  DownsamplingPolicy policy = DownsamplingPolicy::none;
  double ratio = 1.0;
  DownsamplingMode mode = DownsamplingMode::sample_then_batch;
  std::size_t stb_refresh_every_epochs = 1;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(ratio > 0.0 && ratio <= 1.0)) throw Error(Errc::invalid_argument, "downsampling ratio must lie in (0, 1]");
    if (stb_refresh_every_epochs == 0) throw Error(Errc::invalid_argument, "stb_refresh_every_epochs must be positive");
    if (is_rs2(policy) && mode != DownsamplingMode::sample_then_batch)
      throw Error(Errc::invalid_argument, "RS2 policies require sample-then-batch mode");
  }
};

struct SelectedIndex {
  std::size_t index = 0;
  double weight = 1.0;

  friend bool operator==(const SelectedIndex&, const SelectedIndex&) = default;
};

/// Per-sample scores. loss: cross-entropy. grad_norm: Frobenius norm of the
/// last-layer gradient (p - onehot(y)) outer [x; 1]. margin: p(1st) - p(2nd).
/// least_confidence: max probability. entropy: -sum p log p.
inline std::vector<double> compute_scores(const LogisticRegression& learner, const Matrix& features,
                                          std::span<const std::int64_t> labels, DownsamplingPolicy policy) {
  const std::size_t n = features.rows;
  const std::size_t classes = learner.num_classes();
  const bool needs_labels = policy == DownsamplingPolicy::loss || policy == DownsamplingPolicy::grad_norm;
  if (needs_labels && labels.size() != n) throw Error(Errc::invalid_argument, "labels required for loss-based scores");
  std::vector<double> scores(n, 0.0);
  std::vector<double> p(classes);
  for (std::size_t i = 0; i < n; ++i) {
    const auto x = features.row(i);
    if (needs_labels && (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes))
      throw Error(Errc::invalid_argument, "label " + std::to_string(labels[i]) + " >= num_classes");
    switch (policy) {
      case DownsamplingPolicy::loss: scores[i] = learner.loss(x, labels[i]); break;
      case DownsamplingPolicy::grad_norm: {
        learner.predict_proba(x, p);
        p[static_cast<std::size_t>(labels[i])] -= 1.0;
        double residual = 0.0, input = 1.0;
        for (double v : p) residual += v * v;
        for (double v : x) input += v * v;
        scores[i] = std::sqrt(residual * input);
        break;
      }
      case DownsamplingPolicy::margin: {
        learner.predict_proba(x, p);
        std::partial_sort(p.begin(), p.begin() + 2, p.end(), std::greater<>());
        scores[i] = p[0] - p[1];
        break;
      }
      case DownsamplingPolicy::least_confidence:
        learner.predict_proba(x, p);
        scores[i] = *std::max_element(p.begin(), p.end());
        break;
      case DownsamplingPolicy::entropy: {
        learner.predict_proba(x, p);
        double h = 0.0;
        for (double v : p)
          if (v > 0.0) h -= v * std::log(v);
        scores[i] = h;
        break;
      }
      default: break;
    }
    if (!std::isfinite(scores[i])) throw Error(Errc::diverged, "non-finite downsampling score");
  }
  return scores;
}

/// Picks `k` of the scored items. loss/grad_norm: sampling without
/// replacement with probability proportional to score (uniform when all
/// scores are zero), weight 1 / (N p_i). margin/least_confidence: lowest k.
/// entropy: highest k. Ties go to the lower index. Result is index-ordered.
inline std::vector<SelectedIndex> select_k(std::span<const double> scores, DownsamplingPolicy policy, std::size_t k,
                                           std::mt19937_64& rng) {
  const std::size_t n = scores.size();
  k = std::min(k, n);
  std::vector<SelectedIndex> out;
  if (k == n) {
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back({i, 1.0});
    return out;
  }
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);

  switch (policy) {
    case DownsamplingPolicy::margin:
    case DownsamplingPolicy::least_confidence:
      std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                        [&](std::size_t a, std::size_t b) { return scores[a] != scores[b] ? scores[a] < scores[b] : a < b; });
      for (std::size_t i = 0; i < k; ++i) out.push_back({idx[i], 1.0});
      break;
    case DownsamplingPolicy::entropy:
      std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                        [&](std::size_t a, std::size_t b) { return scores[a] != scores[b] ? scores[a] > scores[b] : a < b; });
      for (std::size_t i = 0; i < k; ++i) out.push_back({idx[i], 1.0});
      break;
    case DownsamplingPolicy::loss:
    case DownsamplingPolicy::grad_norm: {
      const double total = std::accumulate(scores.begin(), scores.end(), 0.0);
      // Exponential keys log(u) / s: the k largest are distributed exactly as
      // k successive draws without replacement proportional to s.
      std::vector<std::pair<double, double>> keys(n);
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      for (std::size_t i = 0; i < n; ++i) {
        double u = unit(rng);
        while (u == 0.0) u = unit(rng);
        const double s = total > 0.0 ? scores[i] : 1.0;
        keys[i] = {s > 0.0 ? std::log(u) / s : -std::numeric_limits<double>::infinity(), unit(rng)};
      }
      std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                        [&](std::size_t a, std::size_t b) { return keys[a] > keys[b]; });
      for (std::size_t i = 0; i < k; ++i) {
        const double p = total > 0.0 ? scores[idx[i]] / total : 1.0 / static_cast<double>(n);
        const double w = p > 0.0 ? 1.0 / (static_cast<double>(n) * p) : 1.0;
        out.push_back({idx[i], w});
      }
      break;
    }
    default:
      throw Error(Errc::invalid_argument, std::string("policy ") + to_string(policy) + " does not select by score");
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.index < b.index; });
  return out;
}

/// Batch-then-sample: selects floor(ratio * |batch|) items of one batch.
inline std::vector<SelectedIndex> downsample_bts(std::span<const double> scores, DownsamplingPolicy policy,
                                                 double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio <= 1.0)) throw Error(Errc::invalid_argument, "downsampling ratio must lie in (0, 1]");
  if (is_rs2(policy)) throw Error(Errc::invalid_argument, "RS2 policies are sample-then-batch only");
  std::mt19937_64 rng(seed);
  if (policy == DownsamplingPolicy::none) return select_k(scores, policy, scores.size(), rng);
  return select_k(scores, policy, budget(scores.size(), ratio), rng);
}

/// Sample-then-batch selection over a whole pool, one call per epoch. Keeps
/// the RS2 without-replacement cycle between epochs.
class StbSampler {
 public:
  StbSampler(DownsamplingPolicy policy, double ratio, std::uint64_t seed) : policy_(policy), ratio_(ratio), seed_(seed) {
    if (!(ratio > 0.0 && ratio <= 1.0)) throw Error(Errc::invalid_argument, "downsampling ratio must lie in (0, 1]");
  }

  /// `scores` is ignored by the RS2 policies and may be empty for them;
  /// `pool_size` gives N.
  std::vector<SelectedIndex> select(std::span<const double> scores, std::size_t pool_size, std::size_t epoch) {
    const std::size_t k = budget(pool_size, ratio_);
    std::mt19937_64 rng(derive_seed(seed_, "stb", epoch));
    std::vector<SelectedIndex> out;
    if (policy_ == DownsamplingPolicy::rs2_with_replacement) {
      std::uniform_int_distribution<std::size_t> pick(0, pool_size - 1);
      for (std::size_t i = 0; i < k; ++i) out.push_back({pick(rng), 1.0});
      std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.index < b.index; });
      return out;
    }
    if (policy_ == DownsamplingPolicy::rs2_without_replacement) return next_cycle_slice(pool_size, k, rng);
    if (scores.size() != pool_size) throw Error(Errc::invalid_argument, "score count does not match pool size");
    if (policy_ == DownsamplingPolicy::none) return select_k(scores, policy_, pool_size, rng);
    return select_k(scores, policy_, k, rng);
  }

 private:
  std::vector<SelectedIndex> next_cycle_slice(std::size_t n, std::size_t k, std::mt19937_64& rng) {
    if (n != cycle_size_) {
      cycle_size_ = n;
      pending_.clear();
    }
    std::vector<SelectedIndex> out;
    std::vector<bool> taken(n, false);
    while (out.size() < k) {
      if (pending_.empty()) {
        // new pass over the pool; exclude what this epoch already holds
        for (std::size_t i = 0; i < n; ++i)
          if (!taken[i]) pending_.push_back(i);
        std::shuffle(pending_.begin(), pending_.end(), rng);
        if (pending_.empty()) break;
      }
      const auto i = pending_.back();
      pending_.pop_back();
      taken[i] = true;
      out.push_back({i, 1.0});
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.index < b.index; });
    return out;
  }

  DownsamplingPolicy policy_;
  double ratio_;
  std::uint64_t seed_;
  std::size_t cycle_size_ = 0;
  std::vector<std::size_t> pending_;
};

}  // namespace ctflow

#endif  // CTFLOW_DOWNSAMPLING_HPP
