#ifndef CTFLOW_LOADER_HPP
#define CTFLOW_LOADER_HPP

// Prefetching data loader over a trigger training set. Every worker owns an
// equal share of each partition, keeps a buffer of prefetched partition shares
// filled by concurrent fetches, and batches are taken from workers round-robin.

#include <algorithm>
#include <cstdint>
#include <deque>
#include <future>
#include <memory>
#include <optional>
#include <random>
#include <semaphore>
#include <span>
#include <string>
#include <vector>

#include "ctflow/core.hpp"
#include "ctflow/learner.hpp"
#include "ctflow/selector.hpp"
#include "ctflow/storage.hpp"

namespace ctflow {

struct LoaderConfig {
  std::size_t num_workers = 1;
  std::size_t prefetch_buffer_partitions = 0;
  std::size_t parallel_prefetch_requests = 1;
  std::size_t storage_threads = 1;
  std::size_t storage_buffer_bytes = SampleStore::kDefaultBufferBytes;

  void validate() const {
    if (num_workers == 0) throw Error(Errc::invalid_argument, "num_workers must be >= 1");
    if (parallel_prefetch_requests == 0) throw Error(Errc::invalid_argument, "parallel_prefetch_requests must be >= 1");
    if (storage_threads == 0) throw Error(Errc::invalid_argument, "storage_threads must be >= 1");
    if (storage_buffer_bytes == 0) throw Error(Errc::invalid_argument, "storage_buffer_bytes must be positive");
  }
};

/// Samples of one batch in loader order, with their payload bytes.
struct LoadedBatch {
  std::size_t worker = 0;
  std::vector<std::uint64_t> keys;
  std::vector<std::int64_t> labels;
  std::vector<double> weights;
  std::vector<std::size_t> offsets{0};
  std::vector<std::byte> bytes;

  std::size_t size() const { return keys.size(); }
  std::span<const std::byte> payload(std::size_t i) const {
    return {bytes.data() + offsets[i], offsets[i + 1] - offsets[i]};
  }
};

/// Decodes the f32 payloads of a loaded batch.
inline FeatureBatch to_feature_batch(const LoadedBatch& b, std::size_t feature_dim) {
  FeatureBatch out;
  out.features = Matrix(b.size(), feature_dim);
  out.labels = b.labels;
  out.weights = b.weights;
  out.keys = b.keys;
  for (std::size_t i = 0; i < b.size(); ++i) parse_f32_features(b.payload(i), out.features.row(i));
  return out;
}

namespace detail {

/// One fetched partition share, in share order.
struct FetchedShare {
  std::vector<std::uint64_t> keys;
  std::vector<std::int64_t> labels;
  std::vector<double> weights;
  std::vector<std::size_t> offsets{0};
  std::vector<std::byte> bytes;
};

inline FetchedShare fetch_share(const SampleStore& store, std::span<const WeightedKey> share, const LoaderConfig& cfg,
                                std::size_t partition) {
  try {
    std::vector<std::uint64_t> keys;
    keys.reserve(share.size());
    for (const auto& wk : share) keys.push_back(wk.key);
    auto buffers = store.get_samples_by_keys(keys, cfg.storage_threads, cfg.storage_buffer_bytes);

    // Storage answers in file order; restore the share order.
    struct Loc {
      std::uint64_t key;
      std::uint32_t buffer;
      std::uint32_t index;
    };
    std::vector<Loc> fetched;
    fetched.reserve(share.size());
    for (std::uint32_t b = 0; b < buffers.size(); ++b)
      for (std::uint32_t i = 0; i < buffers[b].size(); ++i) fetched.push_back({buffers[b].keys[i], b, i});
    std::stable_sort(fetched.begin(), fetched.end(), [](const Loc& a, const Loc& b) { return a.key < b.key; });
    std::vector<std::uint32_t> wanted(share.size());
    for (std::uint32_t i = 0; i < wanted.size(); ++i) wanted[i] = i;
    std::stable_sort(wanted.begin(), wanted.end(), [&](auto a, auto b) { return share[a].key < share[b].key; });
    if (fetched.size() != wanted.size()) throw Error(Errc::io, "storage returned a different number of samples");
    std::vector<const Loc*> at(share.size());
    for (std::size_t i = 0; i < wanted.size(); ++i) at[wanted[i]] = &fetched[i];

    FetchedShare out;
    out.keys = std::move(keys);
    out.labels.reserve(share.size());
    out.weights.reserve(share.size());
    out.offsets.reserve(share.size() + 1);
    std::size_t total = 0;
    for (const auto& b : buffers) total += b.bytes.size();
    out.bytes.reserve(total);
    for (std::size_t i = 0; i < share.size(); ++i) {
      const auto& loc = *at[i];
      const auto& buf = buffers[loc.buffer];
      out.labels.push_back(buf.labels[loc.index]);
      out.weights.push_back(share[i].weight);
      const auto p = buf.payload(loc.index);
      out.bytes.insert(out.bytes.end(), p.begin(), p.end());
      out.offsets.push_back(out.bytes.size());
    }
    return out;
  } catch (const Error& e) {
    throw Error(e.code(), "partition " + std::to_string(partition) + ": " + e.what());
  }
}

}  // namespace detail

/// One pass over a trigger training set.
class EpochStream {
 public:
  EpochStream(const EpochStream&) = delete;
  EpochStream& operator=(const EpochStream&) = delete;

  EpochStream(const PartitionSource& source, const SampleStore& store, LoaderConfig config, std::size_t batch_size,
              bool shuffle, std::uint64_t epoch_seed)
      : config_(config), batch_size_(batch_size) {
    config_.validate();
    if (batch_size == 0) throw Error(Errc::invalid_argument, "batch_size must be positive");
    std::vector<std::size_t> order(source.num_partitions());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    if (shuffle) {
      std::mt19937_64 rng(derive_seed(epoch_seed, "partition_order"));
      std::shuffle(order.begin(), order.end(), rng);
    }
    for (std::size_t w = 0; w < config_.num_workers; ++w)
      workers_.push_back(std::make_unique<Worker>(source, store, config_, order, w, shuffle, epoch_seed));
    for (auto& w : workers_) w->start();
  }

  /// Next batch in round-robin worker order; nullopt at the end of the epoch.
  std::optional<LoadedBatch> next() {
    for (std::size_t attempts = 0; attempts < workers_.size(); ++attempts) {
      auto& w = *workers_[cursor_];
      cursor_ = (cursor_ + 1) % workers_.size();
      if (w.exhausted()) continue;
      auto batch = w.next_batch(batch_size_);
      if (batch.size() > 0) return batch;
    }
    return std::nullopt;
  }

 private:
  class Worker {
   public:
    Worker(const PartitionSource& source, const SampleStore& store, const LoaderConfig& config,
           const std::vector<std::size_t>& order, std::size_t id, bool shuffle, std::uint64_t seed)
        : source_(source), store_(store), config_(config), order_(order), id_(id), shuffle_(shuffle), seed_(seed),
          requests_(static_cast<std::ptrdiff_t>(config.parallel_prefetch_requests)) {}

    ~Worker() {
      for (auto& f : inflight_)
        if (f.valid()) f.wait();
    }

    void start() { refill(); }

    bool exhausted() const { return done_; }

    LoadedBatch next_batch(std::size_t batch_size) {
      LoadedBatch b;
      b.worker = id_;
      while (b.size() < batch_size) {
        if (!current_ || pos_ >= current_->keys.size()) {
          if (!advance()) {
            done_ = true;
            break;
          }
          continue;
        }
        const auto& s = *current_;
        const auto take = std::min(batch_size - b.size(), s.keys.size() - pos_);
        for (std::size_t i = pos_; i < pos_ + take; ++i) {
          b.keys.push_back(s.keys[i]);
          b.labels.push_back(s.labels[i]);
          b.weights.push_back(s.weights[i]);
          b.bytes.insert(b.bytes.end(), s.bytes.begin() + static_cast<std::ptrdiff_t>(s.offsets[i]),
                         s.bytes.begin() + static_cast<std::ptrdiff_t>(s.offsets[i + 1]));
          b.offsets.push_back(b.bytes.size());
        }
        pos_ += take;
      }
      return b;
    }

   private:
    std::vector<WeightedKey> plan_share(std::size_t step) const {
      const auto p = order_[step];
      auto share = source_.share(p, id_, config_.num_workers);
      if (shuffle_) {
        std::mt19937_64 rng(derive_seed(seed_, "share", p * config_.num_workers + id_));
        std::shuffle(share.begin(), share.end(), rng);
      }
      return share;
    }

    detail::FetchedShare fetch(std::size_t step) const {
      return detail::fetch_share(store_, plan_share(step), config_, order_[step]);
    }

    void refill() {
      while (inflight_.size() < config_.prefetch_buffer_partitions && next_step_ < order_.size()) {
        const auto step = next_step_++;
        inflight_.push_back(std::async(std::launch::async, [this, step] {
          requests_.acquire();
          struct Release {
            std::counting_semaphore<>& s;
            ~Release() { s.release(); }
          } release{requests_};
          return fetch(step);
        }));
      }
    }

    bool advance() {
      pos_ = 0;
      if (config_.prefetch_buffer_partitions == 0) {
        if (next_step_ >= order_.size()) return false;
        current_ = fetch(next_step_++);
        return true;
      }
      if (inflight_.empty()) return false;
      auto fut = std::move(inflight_.front());
      inflight_.pop_front();
      refill();
      current_ = fut.get();
      return true;
    }

    const PartitionSource& source_;
    const SampleStore& store_;
    LoaderConfig config_;
    std::vector<std::size_t> order_;
    std::size_t id_;
    bool shuffle_;
    std::uint64_t seed_;
    std::counting_semaphore<> requests_;
    std::deque<std::future<detail::FetchedShare>> inflight_;
    std::optional<detail::FetchedShare> current_;
    std::size_t next_step_ = 0;
    std::size_t pos_ = 0;
    bool done_ = false;
  };

  LoaderConfig config_;
  std::size_t batch_size_;
  std::vector<std::unique_ptr<Worker>> workers_;
  std::size_t cursor_ = 0;
};

}  // namespace ctflow

#endif  // CTFLOW_LOADER_HPP
