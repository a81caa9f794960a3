#ifndef CTFLOW_LEARNER_HPP
#define CTFLOW_LEARNER_HPP

// Multinomial logistic regression: the reference learner trained by the pipeline.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ctflow/core.hpp"

namespace ctflow {

/// Features, labels and per-sample weights of one training or scoring batch.
struct FeatureBatch {
  Matrix features;
  std::vector<std::int64_t> labels;
  std::vector<double> weights;
  std::vector<std::uint64_t> keys;

  std::size_t size() const { return labels.size(); }
};

/// Decodes a payload of little-endian f32 values into `out`.
inline void parse_f32_features(std::span<const std::byte> payload, std::span<double> out) {
  if (payload.size() < out.size() * 4)
    throw Error(Errc::parse, "payload of " + std::to_string(payload.size()) + " bytes is too short for " +
                                 std::to_string(out.size()) + " f32 features");
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = le::load<float>(payload.data() + 4 * i);
}

inline std::vector<std::byte> encode_f32_features(std::span<const double> values) {
  std::vector<std::byte> out;
  out.reserve(values.size() * 4);
  for (double v : values) le::append<float>(out, static_cast<float>(v));
  return out;
}

class LogisticRegression {
 public:
  LogisticRegression() = default;
  LogisticRegression(std::size_t num_features, std::size_t num_classes)
      : features_(num_features), classes_(num_classes), weights_(num_classes, num_features + 1, 0.0) {
    if (num_features == 0 || num_classes < 2) throw Error(Errc::invalid_argument, "learner needs >= 1 feature and >= 2 classes");
  }

  std::size_t num_features() const { return features_; }
  std::size_t num_classes() const { return classes_; }

  /// classes x (features + 1); the last column is the bias.
  const Matrix& parameters() const { return weights_; }
  Matrix& parameters() { return weights_; }

  double weight(std::size_t c, std::size_t f) const { return weights_(c, f); }
  double bias(std::size_t c) const { return weights_(c, features_); }

  void logits(std::span<const double> x, std::span<double> out) const {
    check_width(x.size());
    for (std::size_t c = 0; c < classes_; ++c) {
      const auto row = weights_.row(c);
      double z = row[features_];
      for (std::size_t f = 0; f < features_; ++f) z += row[f] * x[f];
      out[c] = z;
    }
  }

  /// Softmax probabilities, computed with the max-logit shift.
  void predict_proba(std::span<const double> x, std::span<double> out) const {
    logits(x, out);
    const double m = *std::max_element(out.begin(), out.end());
    double sum = 0.0;
    for (auto& v : out) {
      v = std::exp(v - m);
      sum += v;
    }
    for (auto& v : out) v /= sum;
  }

  Matrix predict_proba(const Matrix& x) const {
    Matrix p(x.rows, classes_);
    for (std::size_t i = 0; i < x.rows; ++i) predict_proba(x.row(i), p.row(i));
    return p;
  }

  Matrix logits(const Matrix& x) const {
    Matrix z(x.rows, classes_);
    for (std::size_t i = 0; i < x.rows; ++i) logits(x.row(i), z.row(i));
    return z;
  }

  std::size_t predict(std::span<const double> x) const {
    std::vector<double> p(classes_);
    logits(x, p);
    return static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
  }

  /// Cross-entropy of one sample.
  double loss(std::span<const double> x, std::int64_t label) const {
    check_label(label);
    std::vector<double> z(classes_);
    logits(x, z);
    const double m = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double v : z) sum += std::exp(v - m);
    return std::log(sum) + m - z[static_cast<std::size_t>(label)];
  }

  /// Gradient of the sample loss with respect to the parameters:
  /// (p - onehot(y)) outer [x; 1].
  Matrix sample_gradient(std::span<const double> x, std::int64_t label) const {
    check_label(label);
    std::vector<double> p(classes_);
    predict_proba(x, p);
    p[static_cast<std::size_t>(label)] -= 1.0;
    Matrix g(classes_, features_ + 1);
    for (std::size_t c = 0; c < classes_; ++c) {
      for (std::size_t f = 0; f < features_; ++f) g(c, f) = p[c] * x[f];
      g(c, features_) = p[c];
    }
    return g;
  }

  /// One weighted step: W <- W - lr * sum_i w_i grad_i / sum_i w_i.
  /// Returns the weighted mean loss of the batch before the step.
  double sgd_step(const FeatureBatch& batch, double learning_rate) {
    if (batch.size() == 0) return 0.0;
    Matrix grad(classes_, features_ + 1, 0.0);
    std::vector<double> p(classes_);
    double weight_sum = 0.0, loss_sum = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const double w = batch.weights.empty() ? 1.0 : batch.weights[i];
      if (w <= 0.0) continue;
      const auto label = batch.labels[i];
      check_label(label);
      const auto x = batch.features.row(i);
      logits(x, p);
      const double m = *std::max_element(p.begin(), p.end());
      const double shifted_label_logit = p[static_cast<std::size_t>(label)] - m;
      double sum = 0.0;
      for (auto& v : p) {
        v = std::exp(v - m);
        sum += v;
      }
      loss_sum += w * (std::log(sum) - shifted_label_logit);
      for (auto& v : p) v /= sum;
      p[static_cast<std::size_t>(label)] -= 1.0;
      for (std::size_t c = 0; c < classes_; ++c) {
        const double coef = w * p[c];
        auto row = grad.row(c);
        for (std::size_t f = 0; f < features_; ++f) row[f] += coef * x[f];
        row[features_] += coef;
      }
      weight_sum += w;
    }
    if (weight_sum <= 0.0) return 0.0;
    const double mean_loss = loss_sum / weight_sum;
    if (!std::isfinite(mean_loss)) throw Error(Errc::diverged, "training loss is not finite");
    const double scale = learning_rate / weight_sum;
    for (std::size_t j = 0; j < grad.data.size(); ++j) weights_.data[j] -= scale * grad.data[j];
    return mean_loss;
  }

  friend bool operator==(const LogisticRegression&, const LogisticRegression&) = default;

 private:
  void check_width(std::size_t n) const {
    if (n != features_)
      throw Error(Errc::shape_mismatch, "expected " + std::to_string(features_) + " features, got " + std::to_string(n));
  }
  void check_label(std::int64_t label) const {
    if (label < 0 || static_cast<std::size_t>(label) >= classes_)
      throw Error(Errc::invalid_argument, "label " + std::to_string(label) + " outside [0, " + std::to_string(classes_) + ")");
  }

  std::size_t features_ = 0;
  std::size_t classes_ = 0;
  Matrix weights_;
};

}  // namespace ctflow

#endif  // CTFLOW_LEARNER_HPP
