#ifndef CTFLOW_TRAINER_HPP
#define CTFLOW_TRAINER_HPP

// Per-trigger training loop with optional downsampling under a per-epoch budget.

#include <cstdint>
#include <optional>
#include <random>
#include <unordered_map>
#include <vector>

#include "ctflow/core.hpp"
#include "ctflow/downsampling.hpp"
#include "ctflow/learner.hpp"
#include "ctflow/loader.hpp"
#include "ctflow/selector.hpp"
#include "ctflow/storage.hpp"

namespace ctflow {

struct TrainingConfig {
  std::size_t batch_size = 64;
  std::size_t epochs_per_trigger = 1;
  double learning_rate = 0.1;
  bool use_previous_model = true;
  bool shuffle = false;
  LoaderConfig loader;
  std::size_t feature_dim = 0;
  std::uint64_t seed = 0;

  void validate() const {
    if (batch_size == 0) throw Error(Errc::invalid_argument, "batch_size must be positive");
    if (epochs_per_trigger == 0) throw Error(Errc::invalid_argument, "epochs_per_trigger must be positive");
    if (!(learning_rate >= 0.0)) throw Error(Errc::invalid_argument, "learning_rate must be non-negative");
    loader.validate();
  }
};

struct TrainingResult {
  LogisticRegression model;
  std::vector<std::size_t> epoch_visits;  // gradient-contributing samples per epoch
  std::size_t gradient_steps = 0;
  double last_loss = 0.0;

  std::size_t samples_visited() const {
    std::size_t n = 0;
    for (auto v : epoch_visits) n += v;
    return n;
  }
};

namespace detail {

inline std::size_t contributing(const FeatureBatch& b) {
  std::size_t n = 0;
  for (double w : b.weights) n += w > 0.0 ? 1 : 0;
  return n;
}

inline void append_rows(FeatureBatch& dst, const FeatureBatch& src, std::span<const SelectedIndex> picks) {
  if (dst.features.cols == 0) dst.features.cols = src.features.cols;
  for (const auto& s : picks) {
    dst.features.append_row(src.features.row(s.index));
    dst.labels.push_back(src.labels[s.index]);
    dst.weights.push_back(src.weights[s.index] * s.weight);
    dst.keys.push_back(src.keys[s.index]);
  }
}

}  // namespace detail

/// Trains `model` on one trigger training set. Every step applies
/// W <- W - lr * sum_i w_i grad_i / sum_i w_i. With downsampling ratio q each
/// epoch trains on exactly floor(q * N) samples.
inline TrainingResult train_on_trigger(const TrainingConfig& cfg, const DownsamplingConfig& ds,
                                       const PartitionSource& tts, const SampleStore& store, LogisticRegression model) {
  cfg.validate();
  ds.validate();
  if (tts.num_partitions() == 0 || tts.total_count() == 0)
    throw Error(Errc::empty_trigger, "trigger training set is empty");
  const std::size_t dim = cfg.feature_dim == 0 ? model.num_features() : cfg.feature_dim;

  TrainingResult result;
  auto step = [&](const FeatureBatch& b) {
    result.last_loss = model.sgd_step(b, cfg.learning_rate);
    ++result.gradient_steps;
    return detail::contributing(b);
  };
  auto run_epoch = [&](const PartitionSource& source, std::size_t epoch) {
    std::size_t visits = 0;
    EpochStream stream(source, store, cfg.loader, cfg.batch_size, cfg.shuffle, derive_seed(cfg.seed, "epoch", epoch));
    while (auto loaded = stream.next()) visits += step(to_feature_batch(*loaded, dim));
    return visits;
  };

  const bool downsampling = ds.policy != DownsamplingPolicy::none;

  if (!downsampling) {
    for (std::size_t e = 0; e < cfg.epochs_per_trigger; ++e) result.epoch_visits.push_back(run_epoch(tts, e));
  } else if (ds.mode == DownsamplingMode::batch_then_sample) {
    for (std::size_t e = 0; e < cfg.epochs_per_trigger; ++e) {
      std::mt19937_64 rng(derive_seed(ds.seed, "bts", e));
      EpochStream stream(tts, store, cfg.loader, cfg.batch_size, cfg.shuffle, derive_seed(cfg.seed, "epoch", e));
      FeatureBatch pending;
      pending.features.cols = dim;
      std::size_t seen = 0, selected = 0, visits = 0;
      while (auto loaded = stream.next()) {
        const auto batch = to_feature_batch(*loaded, dim);
        seen += batch.size();
        // cumulative quota keeps the epoch total at exactly floor(q * N)
        const std::size_t quota = budget(seen, ds.ratio) - selected;
        selected += quota;
        const auto scores = compute_scores(model, batch.features, batch.labels, ds.policy);
        const auto picks = select_k(scores, ds.policy, quota, rng);
        detail::append_rows(pending, batch, picks);
        if (pending.size() >= cfg.batch_size) {
          visits += step(pending);
          pending = FeatureBatch{};
          pending.features.cols = dim;
        }
      }
      if (pending.size() > 0) visits += step(pending);
      result.epoch_visits.push_back(visits);
    }
  } else {
    const auto keys = [&] {
      std::vector<WeightedKey> all;
      for (std::size_t p = 0; p < tts.num_partitions(); ++p) {
        auto part = tts.partition(p);
        all.insert(all.end(), part.begin(), part.end());
      }
      return all;
    }();
    const std::size_t partition_size = std::max<std::size_t>(1, tts.partition(0).size());
    StbSampler sampler(ds.policy, ds.ratio, ds.seed);
    std::vector<SelectedIndex> selection;
    for (std::size_t e = 0; e < cfg.epochs_per_trigger; ++e) {
      if (is_rs2(ds.policy)) {
        selection = sampler.select({}, keys.size(), e);
      } else if (e % ds.stb_refresh_every_epochs == 0) {
        // scoring pass over the full pool with the current model
        std::unordered_map<std::uint64_t, double> score_of;
        score_of.reserve(keys.size());
        EpochStream scan(tts, store, cfg.loader, cfg.batch_size, false, 0);
        while (auto loaded = scan.next()) {
          const auto batch = to_feature_batch(*loaded, dim);
          const auto scores = compute_scores(model, batch.features, batch.labels, ds.policy);
          for (std::size_t i = 0; i < batch.size(); ++i) score_of[batch.keys[i]] = scores[i];
        }
        std::vector<double> scores(keys.size());
        for (std::size_t i = 0; i < keys.size(); ++i) scores[i] = score_of.at(keys[i].key);
        selection = sampler.select(scores, keys.size(), e);
      }
      std::vector<WeightedKey> chosen;
      chosen.reserve(selection.size());
      for (const auto& s : selection) chosen.push_back({keys[s.index].key, keys[s.index].weight * s.weight});
      InMemoryPartitions subset(TriggerTrainingSet::from_keys(0, chosen, partition_size));
      result.epoch_visits.push_back(chosen.empty() ? 0 : run_epoch(subset, e));
    }
  }
  result.model = std::move(model);
  return result;
}

}  // namespace ctflow

#endif  // CTFLOW_TRAINER_HPP
