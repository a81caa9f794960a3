#ifndef CTFLOW_SELECTOR_HPP
#define CTFLOW_SELECTOR_HPP

// Selection state per pipeline: informed-sample pools, trigger windows,
// presampling, and the persisted trigger training sets (MDTS partitions).

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "ctflow/core.hpp"
#include "ctflow/storage.hpp"

namespace ctflow {

enum class Presampling { none, uniform, class_balanced, trigger_balanced };

inline const char* to_string(Presampling p) {
  switch (p) {
    case Presampling::none: return "none";
    case Presampling::uniform: return "uniform";
    case Presampling::class_balanced: return "class_balanced";
    case Presampling::trigger_balanced: return "trigger_balanced";
  }
  return "unknown";
}

struct WeightedKey {
  std::uint64_t key = 0;
  double weight = 1.0;

  friend bool operator==(const WeightedKey&, const WeightedKey&) = default;
};

struct PoolEntry {
  std::uint64_t key = 0;
  std::int64_t timestamp = 0;
  std::int64_t label = -1;
  std::uint64_t trigger_id = 0;
};

enum class SelectorBackendKind { memory, local };

struct SelectionConfig {
  std::optional<std::uint64_t> tail_triggers = 0;  // nullopt: all past triggers
  Presampling presampling = Presampling::none;
  double presampling_ratio = 1.0;
  std::uint64_t warmup_triggers = 0;
  std::size_t partition_size = 10000;
  std::size_t writer_threads = 1;
  SelectorBackendKind backend = SelectorBackendKind::memory;
  std::uint64_t seed = 0;
};

// ---------------------------------------------------------------------------
// Presampling

/// Per-group quotas for balanced presampling. Every group gets floor(B/C);
/// the remainder goes to groups in descending size order; quotas are capped
/// at group size and the unused share is redistributed among the rest.
/// `sizes` must be ordered by descending size (ties by group id).
inline std::vector<std::size_t> balanced_quotas(std::span<const std::size_t> sizes, std::size_t budget_total) {
  std::vector<std::size_t> quota(sizes.size(), 0);
  std::vector<bool> fixed(sizes.size(), false);
  std::size_t remaining = budget_total;
  std::size_t active = sizes.size();
  while (active > 0) {
    const std::size_t base = remaining / active;
    std::size_t extra = remaining % active;
    std::vector<std::size_t> tentative(sizes.size(), 0);
    for (std::size_t g = 0; g < sizes.size(); ++g) {
      if (fixed[g]) continue;
      tentative[g] = base + (extra > 0 ? 1 : 0);
      if (extra > 0) --extra;
    }
    bool capped = false;
    for (std::size_t g = 0; g < sizes.size(); ++g) {
      if (!fixed[g] && sizes[g] <= tentative[g]) {
        fixed[g] = true;
        quota[g] = sizes[g];
        remaining -= sizes[g];
        --active;
        capped = true;
      }
    }
    if (!capped) {
      for (std::size_t g = 0; g < sizes.size(); ++g)
        if (!fixed[g]) quota[g] = tentative[g];
      break;
    }
  }
  return quota;
}

/// Model-free selection over a pool. Output has floor(ratio * |pool|) entries,
/// weight 1.0, ascending key order.
inline std::vector<WeightedKey> presample(std::span<const PoolEntry> pool, Presampling policy, double ratio,
                                          std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio <= 1.0)) throw Error(Errc::invalid_argument, "presampling ratio must lie in (0, 1]");
  std::vector<WeightedKey> out;
  const std::size_t target = budget(pool.size(), ratio);
  std::mt19937_64 rng(seed);

  if (policy == Presampling::none || target == pool.size()) {
    out.reserve(pool.size());
    for (const auto& e : pool) out.push_back({e.key, 1.0});
  } else if (policy == Presampling::uniform) {
    std::vector<std::size_t> idx(pool.size());
    std::iota(idx.begin(), idx.end(), 0);
    // partial Fisher-Yates
    for (std::size_t i = 0; i < target; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
      std::swap(idx[i], idx[pick(rng)]);
      out.push_back({pool[idx[i]].key, 1.0});
    }
  } else {
    std::map<std::int64_t, std::vector<std::uint64_t>> groups;
    for (const auto& e : pool) {
      const auto group = policy == Presampling::class_balanced ? e.label : static_cast<std::int64_t>(e.trigger_id);
      groups[group].push_back(e.key);
    }
    std::vector<std::vector<std::uint64_t>*> ordered;
    for (auto& [id, keys] : groups) {
      std::sort(keys.begin(), keys.end());
      ordered.push_back(&keys);
    }
    std::stable_sort(ordered.begin(), ordered.end(), [](auto* a, auto* b) { return a->size() > b->size(); });
    std::vector<std::size_t> sizes;
    for (auto* g : ordered) sizes.push_back(g->size());
    const auto quotas = balanced_quotas(sizes, target);
    for (std::size_t g = 0; g < ordered.size(); ++g) {
      auto& keys = *ordered[g];
      for (std::size_t i = 0; i < quotas[g]; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, keys.size() - 1);
        std::swap(keys[i], keys[pick(rng)]);
        out.push_back({keys[i], 1.0});
      }
    }
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.key < b.key; });
  return out;
}

// ---------------------------------------------------------------------------
// Trigger training sets

/// The weighted key sequence D_r split into fixed-size partitions.
struct TriggerTrainingSet {
  std::uint64_t trigger_id = 0;
  std::size_t partition_size = 0;
  std::vector<std::vector<WeightedKey>> partitions;

  std::size_t total_count() const {
    std::size_t n = 0;
    for (const auto& p : partitions) n += p.size();
    return n;
  }

  static TriggerTrainingSet from_keys(std::uint64_t trigger_id, std::span<const WeightedKey> keys,
                                      std::size_t partition_size) {
    if (partition_size == 0) throw Error(Errc::invalid_argument, "partition_size must be positive");
    TriggerTrainingSet tts{trigger_id, partition_size, {}};
    for (std::size_t i = 0; i < keys.size(); i += partition_size) {
      const auto end = std::min(keys.size(), i + partition_size);
      tts.partitions.emplace_back(keys.begin() + static_cast<std::ptrdiff_t>(i),
                                  keys.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return tts;
  }

  std::vector<WeightedKey> flatten() const {
    std::vector<WeightedKey> all;
    all.reserve(total_count());
    for (const auto& p : partitions) all.insert(all.end(), p.begin(), p.end());
    return all;
  }
};

/// Contiguous slice [begin, end) of a sequence of n items owned by `worker`
/// out of `workers`; sizes differ by at most one, earlier workers get the extra.
inline std::pair<std::size_t, std::size_t> share_bounds(std::size_t n, std::size_t worker, std::size_t workers) {
  const std::size_t base = n / workers, extra = n % workers;
  const std::size_t begin = worker * base + std::min(worker, extra);
  return {begin, begin + base + (worker < extra ? 1 : 0)};
}

/// Read access to a trigger training set, in memory or on disk.
class PartitionSource {
 public:
  virtual ~PartitionSource() = default;
  virtual std::size_t num_partitions() const = 0;
  virtual std::vector<WeightedKey> partition(std::size_t index) const = 0;

  std::vector<WeightedKey> share(std::size_t partition_index, std::size_t worker_id, std::size_t num_workers) const {
    if (num_workers == 0 || worker_id >= num_workers)
      throw Error(Errc::invalid_argument, "worker " + std::to_string(worker_id) + " out of range for " +
                                              std::to_string(num_workers) + " workers");
    if (partition_index >= num_partitions())
      throw Error(Errc::invalid_argument, "partition " + std::to_string(partition_index) + " out of range");
    auto all = partition(partition_index);
    const auto [b, e] = share_bounds(all.size(), worker_id, num_workers);
    return {all.begin() + static_cast<std::ptrdiff_t>(b), all.begin() + static_cast<std::ptrdiff_t>(e)};
  }

  std::size_t total_count() const {
    std::size_t n = 0;
    for (std::size_t p = 0; p < num_partitions(); ++p) n += partition(p).size();
    return n;
  }
};

class InMemoryPartitions final : public PartitionSource {
 public:
  explicit InMemoryPartitions(TriggerTrainingSet tts) : tts_(std::move(tts)) {}
  std::size_t num_partitions() const override { return tts_.partitions.size(); }
  std::vector<WeightedKey> partition(std::size_t index) const override { return tts_.partitions.at(index); }
  const TriggerTrainingSet& set() const { return tts_; }

 private:
  TriggerTrainingSet tts_;
};

// MDTS: magic, version u32, entry_count u32, then entries of (key u64, weight f64), all LE.
inline constexpr std::string_view kMdtsMagic = "MDTS";
inline constexpr std::uint32_t kMdtsVersion = 1;

inline std::vector<std::byte> encode_mdts(std::span<const WeightedKey> entries) {
  std::vector<std::byte> out;
  out.reserve(12 + entries.size() * 16);
  append_magic(out, kMdtsMagic);
  le::append<std::uint32_t>(out, kMdtsVersion);
  le::append<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    le::append<std::uint64_t>(out, e.key);
    le::append<double>(out, e.weight);
  }
  return out;
}

inline std::vector<WeightedKey> decode_mdts(std::span<const std::byte> bytes, const std::string& what = "MDTS") {
  if (bytes.size() < 12 || !has_magic(bytes, kMdtsMagic)) throw Error(Errc::parse, what + ": bad header at byte offset 0");
  if (le::load<std::uint32_t>(bytes.data() + 4) != kMdtsVersion)
    throw Error(Errc::parse, what + ": unsupported version at byte offset 4");
  const auto count = le::load<std::uint32_t>(bytes.data() + 8);
  if (bytes.size() != 12 + std::size_t{count} * 16)
    throw Error(Errc::parse, what + ": size mismatch at byte offset " + std::to_string(bytes.size()));
  std::vector<WeightedKey> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    out[i].key = le::load<std::uint64_t>(bytes.data() + 12 + i * 16);
    out[i].weight = le::load<double>(bytes.data() + 20 + i * 16);
  }
  return out;
}

/// On-disk trigger training sets: `trigger_<r>_partition_<p>_<t>.mdts`, where
/// t indexes the writer thread. Readers concatenate files in t order, so the
/// number of writer threads is independent of the number of reading workers.
class TriggerSampleStorage {
 public:
  explicit TriggerSampleStorage(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::filesystem::create_directories(dir_);
  }

  const std::filesystem::path& directory() const { return dir_; }

  static std::string file_name(std::uint64_t trigger, std::size_t partition, std::size_t thread) {
    return "trigger_" + std::to_string(trigger) + "_partition_" + std::to_string(partition) + "_" +
           std::to_string(thread) + ".mdts";
  }

  void write(const TriggerTrainingSet& tts, std::size_t writer_threads) const {
    if (writer_threads == 0) throw Error(Errc::invalid_argument, "writer_threads must be >= 1");
    std::vector<std::exception_ptr> errors(writer_threads);
    {
      std::vector<std::jthread> pool;
      for (std::size_t t = 0; t < writer_threads; ++t) {
        pool.emplace_back([&, t] {
          try {
            for (std::size_t p = 0; p < tts.partitions.size(); ++p) {
              const auto& part = tts.partitions[p];
              const auto [b, e] = share_bounds(part.size(), t, writer_threads);
              if (b == e && t > 0) continue;
              const auto bytes = encode_mdts(std::span(part).subspan(b, e - b));
              std::ofstream out(dir_ / file_name(tts.trigger_id, p, t), std::ios::binary | std::ios::trunc);
              out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
              if (!out) throw Error(Errc::io, "cannot write trigger partition file");
            }
          } catch (...) {
            errors[t] = std::current_exception();
          }
        });
      }
    }
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
    std::ofstream meta(dir_ / ("trigger_" + std::to_string(tts.trigger_id) + ".meta"));
    meta << tts.partitions.size() << ' ' << tts.partition_size << '\n';
  }

  std::size_t num_partitions(std::uint64_t trigger) const {
    std::ifstream meta(dir_ / ("trigger_" + std::to_string(trigger) + ".meta"));
    if (!meta) throw Error(Errc::not_found, "no trigger training set for trigger " + std::to_string(trigger));
    std::size_t n = 0;
    meta >> n;
    return n;
  }

  std::vector<WeightedKey> read_partition(std::uint64_t trigger, std::size_t partition) const {
    std::vector<WeightedKey> out;
    for (std::size_t t = 0;; ++t) {
      const auto path = dir_ / file_name(trigger, partition, t);
      if (!std::filesystem::exists(path)) {
        if (t == 0) throw Error(Errc::not_found, "missing " + path.string());
        break;
      }
      const auto bytes = detail::read_file(path);
      auto part = decode_mdts(bytes, path.string());
      out.insert(out.end(), part.begin(), part.end());
    }
    return out;
  }

 private:
  std::filesystem::path dir_;
};

/// Handle to one persisted trigger training set.
class PersistedPartitions final : public PartitionSource {
 public:
  PersistedPartitions(const TriggerSampleStorage& storage, std::uint64_t trigger)
      : storage_(&storage), trigger_(trigger), count_(storage.num_partitions(trigger)) {}
  std::size_t num_partitions() const override { return count_; }
  std::vector<WeightedKey> partition(std::size_t index) const override {
    if (index >= count_) throw Error(Errc::invalid_argument, "partition " + std::to_string(index) + " out of range");
    return storage_->read_partition(trigger_, index);
  }

 private:
  const TriggerSampleStorage* storage_;
  std::uint64_t trigger_;
  std::size_t count_;
};

// ---------------------------------------------------------------------------
// Selector state backends. Both keep per-trigger pools behind one interface.

class SelectorBackend {
 public:
  virtual ~SelectorBackend() = default;
  virtual void append(std::span<const PoolEntry> entries) = 0;
  /// Entries of pools first..last (inclusive), in pool then insertion order.
  virtual std::vector<PoolEntry> window(std::uint64_t first, std::uint64_t last) const = 0;
  virtual std::size_t pool_size(std::uint64_t trigger) const = 0;
};

/// Indexed in-memory table.
class MemoryTableBackend final : public SelectorBackend {
 public:
  void append(std::span<const PoolEntry> entries) override {
    for (const auto& e : entries) {
      if (pools_.size() <= e.trigger_id) pools_.resize(e.trigger_id + 1);
      pools_[e.trigger_id].push_back(e);
    }
  }
  std::vector<PoolEntry> window(std::uint64_t first, std::uint64_t last) const override {
    std::vector<PoolEntry> out;
    for (auto t = first; t <= last && t < pools_.size(); ++t) out.insert(out.end(), pools_[t].begin(), pools_[t].end());
    return out;
  }
  std::size_t pool_size(std::uint64_t trigger) const override {
    return trigger < pools_.size() ? pools_[trigger].size() : 0;
  }

 private:
  std::vector<std::vector<PoolEntry>> pools_;
};

/// Append-only binary pool files, one per trigger: records of
/// (key u64, timestamp i64, label i64) LE.
class LocalFileBackend final : public SelectorBackend {
 public:
  explicit LocalFileBackend(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::filesystem::create_directories(dir_);
  }
  void append(std::span<const PoolEntry> entries) override {
    std::map<std::uint64_t, std::vector<std::byte>> chunks;
    for (const auto& e : entries) {
      auto& buf = chunks[e.trigger_id];
      le::append<std::uint64_t>(buf, e.key);
      le::append<std::int64_t>(buf, e.timestamp);
      le::append<std::int64_t>(buf, e.label);
    }
    for (auto& [trigger, buf] : chunks) {
      std::ofstream out(path(trigger), std::ios::binary | std::ios::app);
      out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
      if (!out) throw Error(Errc::io, "cannot append to " + path(trigger).string());
      if (sizes_.size() <= trigger) sizes_.resize(trigger + 1, 0);
      sizes_[trigger] += buf.size() / 24;
    }
  }
  std::vector<PoolEntry> window(std::uint64_t first, std::uint64_t last) const override {
    std::vector<PoolEntry> out;
    for (auto t = first; t <= last && t < sizes_.size(); ++t) {
      if (sizes_[t] == 0) continue;
      const auto bytes = detail::read_file(path(t));
      for (std::size_t i = 0; i + 24 <= bytes.size(); i += 24)
        out.push_back({le::load<std::uint64_t>(bytes.data() + i), le::load<std::int64_t>(bytes.data() + i + 8),
                       le::load<std::int64_t>(bytes.data() + i + 16), t});
    }
    return out;
  }
  std::size_t pool_size(std::uint64_t trigger) const override {
    return trigger < sizes_.size() ? sizes_[trigger] : 0;
  }

 private:
  std::filesystem::path path(std::uint64_t trigger) const { return dir_ / ("pool_" + std::to_string(trigger) + ".bin"); }
  std::filesystem::path dir_;
  std::vector<std::size_t> sizes_;
};

/// Per-pipeline selection state. Pool r collects the samples informed after
/// trigger r-1 closed, up to and including the sample that caused trigger r.
class Selector {
 public:
  explicit Selector(SelectionConfig config, std::unique_ptr<SelectorBackend> backend = nullptr)
      : config_(config), backend_(backend ? std::move(backend) : std::make_unique<MemoryTableBackend>()) {
    if (config_.partition_size == 0) throw Error(Errc::invalid_argument, "partition_size must be positive");
    if (!(config_.presampling_ratio > 0.0 && config_.presampling_ratio <= 1.0))
      throw Error(Errc::invalid_argument, "presampling_ratio must lie in (0, 1]");
  }

  void inform_samples(std::span<const SampleMeta> batch) {
    std::lock_guard lock(mutex_);
    std::unordered_set<std::uint64_t> fresh;
    fresh.reserve(batch.size());
    for (const auto& s : batch)
      if (seen_.contains(s.key) || !fresh.insert(s.key).second)
        throw Error(Errc::duplicate, "key " + std::to_string(s.key) + " informed twice");
    std::vector<PoolEntry> entries;
    entries.reserve(batch.size());
    for (const auto& s : batch) {
      seen_.insert(s.key);
      ++class_counts_[s.label];
      entries.push_back({s.key, s.timestamp, s.label, current_trigger_});
    }
    backend_->append(entries);
  }

  /// Closes the current pool and produces the trigger training set for it.
  TriggerTrainingSet inform_trigger() {
    std::lock_guard lock(mutex_);
    const auto r = current_trigger_;
    const std::uint64_t first =
        config_.tail_triggers ? (r >= *config_.tail_triggers ? r - *config_.tail_triggers : 0) : 0;
    const auto window = backend_->window(first, r);
    if (window.empty()) throw Error(Errc::empty_trigger, "trigger " + std::to_string(r) + " has an empty window");
    last_window_ = window;
    ++current_trigger_;

    std::vector<WeightedKey> selected;
    if (r < config_.warmup_triggers) {
      selected = presample(window, Presampling::none, 1.0, 0);
    } else {
      selected = presample(window, config_.presampling, config_.presampling_ratio,
                           derive_seed(config_.seed, "presample", r));
    }
    return TriggerTrainingSet::from_keys(r, selected, config_.partition_size);
  }

  /// Closes the current pool without selecting (used when a trigger is skipped).
  void skip_trigger() {
    std::lock_guard lock(mutex_);
    ++current_trigger_;
  }

  std::uint64_t current_trigger() const { return current_trigger_; }
  std::size_t informed_count() const { return seen_.size(); }
  std::size_t current_pool_size() const { return backend_->pool_size(current_trigger_); }
  std::size_t class_count(std::int64_t label) const {
    auto it = class_counts_.find(label);
    return it == class_counts_.end() ? 0 : it->second;
  }
  /// Window consulted by the most recent inform_trigger.
  const std::vector<PoolEntry>& last_window() const { return last_window_; }
  const SelectionConfig& config() const { return config_; }

 private:
  SelectionConfig config_;
  std::unique_ptr<SelectorBackend> backend_;
  std::unordered_set<std::uint64_t> seen_;
  std::unordered_map<std::int64_t, std::size_t> class_counts_;
  std::vector<PoolEntry> last_window_;
  std::uint64_t current_trigger_ = 0;
  mutable std::mutex mutex_;
};

}  // namespace ctflow

#endif  // CTFLOW_SELECTOR_HPP
