#ifndef CTFLOW_BENCH_HPP
#define CTFLOW_BENCH_HPP

// Training-loop throughput: samples per second from the start of the loop to
// the last model update, averaged over repetitions. Key-based retrieval goes
// through the prefetching loader; the baseline reads whole files sequentially.

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "ctflow/core.hpp"
#include "ctflow/learner.hpp"
#include "ctflow/loader.hpp"
#include "ctflow/selector.hpp"
#include "ctflow/storage.hpp"

namespace ctflow {

struct BenchOptions {
  std::size_t batch_size = 1024;
  std::size_t repetitions = 3;
  bool cold_cache = true;  // evict the dataset from the page cache before each repetition
  bool train = true;       // one SGD step per batch; false only decodes
  double learning_rate = 0.01;
};

struct BenchPoint {
  std::string mode;  // "keyed" or "sequential"
  LoaderConfig loader;
  std::size_t partition_size = 0;
  std::size_t samples = 0;
  std::vector<double> repetitions;  // samples per second

  double mean() const {
    double s = 0.0;
    for (double v : repetitions) s += v;
    return repetitions.empty() ? 0.0 : s / static_cast<double>(repetitions.size());
  }
};

namespace detail {

inline std::size_t record_features(const SampleStore& store) {
  if (store.size() == 0) throw Error(Errc::invalid_argument, "benchmark dataset is empty");
  return store.entry(0).payload_bytes / 4;
}

class BatchConsumer {
 public:
  BatchConsumer(std::size_t dim, const BenchOptions& opts) : model_(dim, 2), opts_(opts) {}

  void consume(const FeatureBatch& b) {
    if (opts_.train) model_.sgd_step(b, opts_.learning_rate);
    samples_ += b.size();
  }

  std::size_t samples() const { return samples_; }

 private:
  LogisticRegression model_;
  BenchOptions opts_;
  std::size_t samples_ = 0;
};

template <typename T>
class BoundedQueue {
 public:
  explicit BoundedQueue(std::size_t capacity) : capacity_(capacity) {}

  void push(T value) {
    std::unique_lock lock(mutex_);
    not_full_.wait(lock, [&] { return items_.size() < capacity_; });
    items_.push_back(std::move(value));
    not_empty_.notify_one();
  }

  /// nullopt once closed and drained.
  std::optional<T> pop() {
    std::unique_lock lock(mutex_);
    not_empty_.wait(lock, [&] { return !items_.empty() || closed_; });
    if (items_.empty()) return std::nullopt;
    T v = std::move(items_.front());
    items_.pop_front();
    not_full_.notify_one();
    return v;
  }

  void close() {
    std::lock_guard lock(mutex_);
    closed_ = true;
    not_empty_.notify_all();
  }

 private:
  std::size_t capacity_;
  std::deque<T> items_;
  bool closed_ = false;
  std::mutex mutex_;
  std::condition_variable not_full_, not_empty_;
};

}  // namespace detail

/// One training pass over `keys` (in the given order) through the loader.
inline BenchPoint bench_keyed(const SampleStore& store, std::span<const std::uint64_t> keys, const LoaderConfig& loader,
                              std::size_t partition_size, const BenchOptions& opts) {
  const std::size_t dim = detail::record_features(store);
  std::vector<WeightedKey> weighted;
  weighted.reserve(keys.size());
  for (auto k : keys) weighted.push_back({k, 1.0});
  InMemoryPartitions source(TriggerTrainingSet::from_keys(0, weighted, partition_size));
  BenchPoint point{"keyed", loader, partition_size, keys.size(), {}};
  for (std::size_t rep = 0; rep < opts.repetitions; ++rep) {
    if (opts.cold_cache) store.drop_page_cache();
    detail::BatchConsumer consumer(dim, opts);
    const auto start = std::chrono::steady_clock::now();
    EpochStream stream(source, store, loader, opts.batch_size, false, 0);
    while (auto batch = stream.next()) consumer.consume(to_feature_batch(*batch, dim));
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (consumer.samples() != keys.size()) throw Error(Errc::io, "loader returned a different number of samples");
    point.repetitions.push_back(static_cast<double>(keys.size()) / secs);
  }
  return point;
}

/// Baseline: every worker reads its share of the files front to back in large
/// chunks and emits all records, with no key lookup or selection.
inline BenchPoint bench_sequential(const SampleStore& store, std::size_t workers, const BenchOptions& opts,
                                   std::size_t chunk_bytes = std::size_t{4} << 20) {
  if (workers == 0) throw Error(Errc::invalid_argument, "workers must be >= 1");
  const std::size_t dim = detail::record_features(store);
  for (const auto& r : store.registrations())
    if (r.spec.kind != WrapperKind::binary_fixed_record)
      throw Error(Errc::invalid_argument, "sequential baseline needs fixed-record files");
  LoaderConfig cfg;
  cfg.num_workers = workers;
  BenchPoint point{"sequential", cfg, 0, store.size(), {}};
  const auto nfiles = store.num_files();

  for (std::size_t rep = 0; rep < opts.repetitions; ++rep) {
    if (opts.cold_cache) store.drop_page_cache();
    detail::BatchConsumer consumer(dim, opts);
    const auto start = std::chrono::steady_clock::now();
    std::vector<std::unique_ptr<detail::BoundedQueue<FeatureBatch>>> queues;
    for (std::size_t w = 0; w < workers; ++w) queues.push_back(std::make_unique<detail::BoundedQueue<FeatureBatch>>(2));
    std::vector<std::exception_ptr> errors(workers);
    {
      std::vector<std::jthread> pool;
      for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
          auto& q = *queues[w];
          try {
            const auto [fb, fe] = share_bounds(nfiles, w, workers);
            FeatureBatch batch;
            batch.features.cols = dim;
            auto flush = [&] {
              if (batch.size() == 0) return;
              q.push(std::move(batch));
              batch = FeatureBatch{};
              batch.features.cols = dim;
            };
            std::vector<std::byte> buf;
            for (std::size_t f = fb; f < fe; ++f) {
              detail::FileHandle file(store.file_path(static_cast<std::uint32_t>(f)));
              std::byte header[kMdsfHeaderBytes];
              file.read_exact(header, kMdsfHeaderBytes, 0);
              const auto record = le::load<std::uint32_t>(header + 8);
              const auto count = le::load<std::uint32_t>(header + 12);
              const std::size_t per_chunk = std::max<std::size_t>(1, chunk_bytes / record);
              std::vector<double> row(dim);
              for (std::size_t first = 0; first < count; first += per_chunk) {
                const auto n = std::min<std::size_t>(per_chunk, count - first);
                buf.resize(n * record);
                file.read_exact(buf.data(), buf.size(), kMdsfHeaderBytes + first * record);
                for (std::size_t i = 0; i < n; ++i) {
                  const auto* rec = buf.data() + i * record;
                  parse_f32_features({rec + 8, record - 8}, row);
                  batch.features.append_row(row);
                  batch.labels.push_back(le::load<std::int64_t>(rec));
                  batch.weights.push_back(1.0);
                  batch.keys.push_back(0);
                  if (batch.size() == opts.batch_size) flush();
                }
              }
            }
            flush();
          } catch (...) {
            errors[w] = std::current_exception();
          }
          q.close();
        });
      }
      // round-robin over workers, as the keyed loader does
      std::vector<bool> open(workers, true);
      std::size_t remaining = workers;
      for (std::size_t w = 0; remaining > 0; w = (w + 1) % workers) {
        if (!open[w]) continue;
        auto b = queues[w]->pop();
        if (!b) {
          open[w] = false;
          --remaining;
          continue;
        }
        consumer.consume(*b);
      }
    }
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    point.repetitions.push_back(static_cast<double>(consumer.samples()) / secs);
  }
  return point;
}

inline std::string bench_csv_header() {
  return "mode,workers,prefetched_partitions,parallel_requests,storage_threads,partition_size,samples,rep1,rep2,rep3,"
         "mean_samples_per_second\n";
}

inline std::string bench_csv_row(const BenchPoint& p) {
  std::string s = p.mode + "," + std::to_string(p.loader.num_workers) + "," +
                  std::to_string(p.loader.prefetch_buffer_partitions) + "," +
                  std::to_string(p.loader.parallel_prefetch_requests) + "," + std::to_string(p.loader.storage_threads) +
                  "," + std::to_string(p.partition_size) + "," + std::to_string(p.samples);
  for (std::size_t i = 0; i < 3; ++i) s += "," + (i < p.repetitions.size() ? format_double(p.repetitions[i]) : "");
  return s + "," + format_double(p.mean()) + "\n";
}

}  // namespace ctflow

#endif  // CTFLOW_BENCH_HPP
