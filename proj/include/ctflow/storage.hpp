#ifndef CTFLOW_STORAGE_HPP
#define CTFLOW_STORAGE_HPP

// Sample storage: file wrappers, the key index, grouped parallel retrieval and
// experiment-mode stream replay.

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <unordered_set>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctflow/core.hpp"

namespace ctflow {

enum class WrapperKind { binary_fixed_record, csv, single_sample };

inline const char* to_string(WrapperKind k) {
  switch (k) {
    case WrapperKind::binary_fixed_record: return "binary_fixed_record";
    case WrapperKind::csv: return "csv";
    case WrapperKind::single_sample: return "single_sample";
  }
  return "unknown";
}

inline WrapperKind wrapper_kind_from_string(std::string_view s) {
  if (s == "binary_fixed_record" || s == "binary") return WrapperKind::binary_fixed_record;
  if (s == "csv") return WrapperKind::csv;
  if (s == "single_sample") return WrapperKind::single_sample;
  throw Error(Errc::invalid_argument, "unknown wrapper kind '" + std::string(s) + "'");
}

struct FileRecordSpec {
  WrapperKind kind = WrapperKind::binary_fixed_record;
  std::uint32_t record_bytes = 0;  // binary: 0 accepts the header value
  int label_column = 0;            // csv
  bool csv_header = false;         // csv: first row is a header
  std::int64_t label = -1;         // single_sample: label supplied at registration
};

struct SampleMeta {
  std::uint64_t key = 0;
  std::int64_t timestamp = 0;
  std::int64_t label = -1;

  friend bool operator==(const SampleMeta&, const SampleMeta&) = default;
};

struct Sample {
  std::uint64_t key = 0;
  std::int64_t timestamp = 0;
  std::int64_t label = -1;
  std::vector<std::byte> payload;
};

struct SampleIndexEntry {
  std::uint64_t byte_offset = 0;
  std::int64_t label = -1;
  std::int64_t timestamp = 0;
  std::uint32_t file_id = 0;
  std::uint32_t payload_bytes = 0;
};

struct StreamBatch {
  std::vector<SampleMeta> samples;
  std::int64_t watermark = 0;
};

/// A contiguous block of retrieved samples. Payloads are stored back to back.
struct ResponseBuffer {
  std::vector<std::uint64_t> keys;
  std::vector<std::int64_t> labels;
  std::vector<std::size_t> offsets{0};
  std::vector<std::byte> bytes;

  std::size_t size() const { return keys.size(); }
  bool empty() const { return keys.empty(); }
  std::span<const std::byte> payload(std::size_t i) const {
    return {bytes.data() + offsets[i], offsets[i + 1] - offsets[i]};
  }
  void push(std::uint64_t key, std::int64_t label, std::span<const std::byte> payload) {
    keys.push_back(key);
    labels.push_back(label);
    bytes.insert(bytes.end(), payload.begin(), payload.end());
    offsets.push_back(bytes.size());
  }
};

enum class SplitScheme { hash_modulo, every_kth };

struct StreamSplit {
  std::vector<std::uint64_t> train;  // (timestamp, key) order
  std::vector<std::uint64_t> eval;
};

// ---------------------------------------------------------------------------
// MDSF: 16-byte header (magic, version, record_bytes, record_count; u32 LE),
// then record_count records of [i64 LE label | record_bytes - 8 payload bytes].

inline constexpr std::string_view kMdsfMagic = "MDSF";
inline constexpr std::uint32_t kMdsfVersion = 1;
inline constexpr std::size_t kMdsfHeaderBytes = 16;

/// Streams fixed-size records into an MDSF file; the header is patched on close.
class MdsfWriter {
 public:
  MdsfWriter(const std::filesystem::path& path, std::uint32_t record_bytes)
      : out_(path, std::ios::binary | std::ios::trunc), record_bytes_(record_bytes) {
    if (record_bytes < 9) throw Error(Errc::invalid_argument, "MDSF record_bytes must be >= 9");
    if (!out_) throw Error(Errc::io, "cannot create " + path.string());
    std::vector<std::byte> header(kMdsfHeaderBytes);
    out_.write(reinterpret_cast<const char*>(header.data()), static_cast<std::streamsize>(header.size()));
  }
  MdsfWriter(const MdsfWriter&) = delete;
  MdsfWriter& operator=(const MdsfWriter&) = delete;
  ~MdsfWriter() {
    try {
      close();
    } catch (...) {
    }
  }

  void append(std::int64_t label, std::span<const std::byte> payload) {
    if (payload.size() != record_bytes_ - 8) throw Error(Errc::invalid_argument, "payload size does not match record_bytes - 8");
    std::byte label_bytes[8];
    le::store<std::int64_t>(label_bytes, label);
    out_.write(reinterpret_cast<const char*>(label_bytes), 8);
    out_.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
    ++count_;
  }

  void close() {
    if (closed_) return;
    closed_ = true;
    std::vector<std::byte> header;
    append_magic(header, kMdsfMagic);
    le::append<std::uint32_t>(header, kMdsfVersion);
    le::append<std::uint32_t>(header, record_bytes_);
    le::append<std::uint32_t>(header, count_);
    out_.seekp(0);
    out_.write(reinterpret_cast<const char*>(header.data()), static_cast<std::streamsize>(header.size()));
    out_.close();
    if (!out_) throw Error(Errc::io, "failed writing MDSF file");
  }

  std::uint32_t count() const { return count_; }

 private:
  std::ofstream out_;
  std::uint32_t record_bytes_;
  std::uint32_t count_ = 0;
  bool closed_ = false;
};

namespace detail {

class FileHandle {
 public:
  explicit FileHandle(const std::string& path) : fd_(::open(path.c_str(), O_RDONLY | O_CLOEXEC)) {
    if (fd_ < 0) throw Error(Errc::io, "cannot open " + path);
  }
  FileHandle(const FileHandle&) = delete;
  FileHandle& operator=(const FileHandle&) = delete;
  ~FileHandle() {
    if (fd_ >= 0) ::close(fd_);
  }

  void read_exact(std::byte* dst, std::size_t n, std::uint64_t offset) const {
    std::size_t done = 0;
    while (done < n) {
      const auto got = ::pread(fd_, dst + done, n - done, static_cast<off_t>(offset + done));
      if (got < 0) {
        if (errno == EINTR) continue;
        throw Error(Errc::io, "pread failed");
      }
      if (got == 0) throw Error(Errc::io, "unexpected end of file");
      done += static_cast<std::size_t>(got);
    }
  }

  std::uint64_t size() const {
    struct stat st {};
    if (::fstat(fd_, &st) != 0) throw Error(Errc::io, "fstat failed");
    return static_cast<std::uint64_t>(st.st_size);
  }

  void drop_cache() const { ::posix_fadvise(fd_, 0, 0, POSIX_FADV_DONTNEED); }

 private:
  int fd_;
};

inline std::vector<std::byte> read_file(const std::filesystem::path& path) {
  FileHandle f(path.string());
  std::vector<std::byte> bytes(f.size());
  if (!bytes.empty()) f.read_exact(bytes.data(), bytes.size(), 0);
  return bytes;
}

}  // namespace detail

/// Reads a whole MDSF file; used for format round-trip checks.
struct MdsfContents {
  std::uint32_t record_bytes = 0;
  std::vector<std::int64_t> labels;
  std::vector<std::byte> payloads;  // record_count * (record_bytes - 8)
};

inline MdsfContents read_mdsf(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  if (bytes.size() < kMdsfHeaderBytes || !has_magic(bytes, kMdsfMagic))
    throw Error(Errc::parse, path.string() + ": bad MDSF header at byte offset 0");
  MdsfContents out;
  out.record_bytes = le::load<std::uint32_t>(bytes.data() + 8);
  const auto count = le::load<std::uint32_t>(bytes.data() + 12);
  if (bytes.size() != kMdsfHeaderBytes + std::uint64_t{count} * out.record_bytes)
    throw Error(Errc::parse, path.string() + ": size mismatch at byte offset " + std::to_string(bytes.size()));
  const std::size_t payload_bytes = out.record_bytes - 8;
  out.labels.reserve(count);
  out.payloads.reserve(std::size_t{count} * payload_bytes);
  for (std::size_t i = 0; i < count; ++i) {
    const auto* rec = bytes.data() + kMdsfHeaderBytes + i * out.record_bytes;
    out.labels.push_back(le::load<std::int64_t>(rec));
    out.payloads.insert(out.payloads.end(), rec + 8, rec + out.record_bytes);
  }
  return out;
}

// ---------------------------------------------------------------------------

/// Registration record kept so that a store can be persisted as a manifest.
struct FileRegistration {
  std::string path;
  FileRecordSpec spec;
  std::int64_t base_timestamp = 0;
  std::vector<std::int64_t> timestamp_offsets;
};

/// Key-addressed sample store. Keys are dense and assigned in registration
/// order, so the index is a vector addressed by key.
class SampleStore {
 public:
  static constexpr std::size_t kDefaultBufferBytes = std::size_t{8} << 20;
  static constexpr std::size_t kMaxCoalescedRead = std::size_t{4} << 20;

  SampleStore() = default;
  SampleStore(const SampleStore&) = delete;
  SampleStore& operator=(const SampleStore&) = delete;
  SampleStore(SampleStore&&) = delete;
  SampleStore& operator=(SampleStore&&) = delete;

  std::vector<std::uint64_t> register_file(const std::filesystem::path& path, const FileRecordSpec& spec,
                                           std::int64_t base_timestamp,
                                           std::span<const std::int64_t> per_sample_offsets = {}) {
    std::error_code ec;
    auto canonical = std::filesystem::weakly_canonical(path, ec);
    const std::string id = ec ? path.string() : canonical.string();
    if (!std::filesystem::exists(path)) throw Error(Errc::io, "file does not exist: " + path.string());
    if (registered_paths_.contains(id)) throw Error(Errc::duplicate, "file already registered: " + id);

    std::vector<Located> located;
    switch (spec.kind) {
      case WrapperKind::binary_fixed_record: located = scan_binary(id, spec); break;
      case WrapperKind::csv: located = scan_csv(id, spec); break;
      case WrapperKind::single_sample: {
        detail::FileHandle f(id);
        located.push_back({0, static_cast<std::uint32_t>(f.size()), spec.label});
        break;
      }
    }
    if (!per_sample_offsets.empty() && per_sample_offsets.size() != located.size())
      throw Error(Errc::invalid_argument, id + ": " + std::to_string(per_sample_offsets.size()) +
                                              " timestamp offsets for " + std::to_string(located.size()) + " samples");

    const auto file_id = static_cast<std::uint32_t>(files_.size());
    files_.push_back(id);
    registered_paths_.insert(id);
    registrations_.push_back({id, spec, base_timestamp,
                              std::vector<std::int64_t>(per_sample_offsets.begin(), per_sample_offsets.end())});

    std::vector<std::uint64_t> keys;
    keys.reserve(located.size());
    index_.reserve(index_.size() + located.size());
    for (std::size_t i = 0; i < located.size(); ++i) {
      const std::int64_t ts = base_timestamp + (per_sample_offsets.empty() ? 0 : per_sample_offsets[i]);
      keys.push_back(index_.size());
      index_.push_back({located[i].offset, located[i].label, ts, file_id, located[i].bytes});
    }
    return keys;
  }

  std::size_t size() const { return index_.size(); }
  std::size_t num_files() const { return files_.size(); }
  const std::string& file_path(std::uint32_t file_id) const { return files_.at(file_id); }
  const std::vector<FileRegistration>& registrations() const { return registrations_; }

  const SampleIndexEntry& entry(std::uint64_t key) const {
    if (key >= index_.size()) throw Error(Errc::not_found, "unknown key " + std::to_string(key));
    return index_[key];
  }

  SampleMeta meta(std::uint64_t key) const {
    const auto& e = entry(key);
    return {key, e.timestamp, e.label};
  }

  /// Number of file opens performed by retrieval; instrumentation for tests and benchmarks.
  std::uint64_t open_count() const { return open_count_.load(); }
  void reset_open_count() { open_count_ = 0; }

  /// Evicts every registered file from the OS page cache.
  void drop_page_cache() const {
    for (const auto& f : files_) detail::FileHandle(f).drop_cache();
  }

  using BufferSink = std::function<void(ResponseBuffer&& buffer, std::size_t share)>;

  /// Retrieves the given keys in `threads` contiguous shares. Inside a share,
  /// samples are grouped by file (each file opened once) and ordered by byte
  /// offset; a buffer is emitted when it holds at least `buffer_bytes` payload
  /// bytes or when the share is exhausted. Sink calls are serialized.
  void get_samples_by_keys(std::span<const std::uint64_t> keys, std::size_t threads, std::size_t buffer_bytes,
                           const BufferSink& sink) const {
    if (threads == 0) throw Error(Errc::invalid_argument, "threads must be >= 1");
    if (buffer_bytes == 0) throw Error(Errc::invalid_argument, "buffer_bytes must be positive");
    for (auto k : keys)
      if (k >= index_.size()) throw Error(Errc::not_found, "unknown key " + std::to_string(k));
    if (keys.empty()) return;

    threads = std::min(threads, keys.size());
    std::mutex sink_mutex;
    auto guarded = [&](ResponseBuffer&& buf, std::size_t share) {
      std::lock_guard lock(sink_mutex);
      sink(std::move(buf), share);
    };
    if (threads == 1) {
      read_share(keys, buffer_bytes, 0, guarded);
      return;
    }
    std::vector<std::exception_ptr> errors(threads);
    {
      std::vector<std::jthread> pool;
      pool.reserve(threads);
      const std::size_t base = keys.size() / threads, extra = keys.size() % threads;
      std::size_t begin = 0;
      for (std::size_t t = 0; t < threads; ++t) {
        const std::size_t len = base + (t < extra ? 1 : 0);
        auto share = keys.subspan(begin, len);
        begin += len;
        pool.emplace_back([&, share, t] {
          try {
            read_share(share, buffer_bytes, t, guarded);
          } catch (...) {
            errors[t] = std::current_exception();
          }
        });
      }
    }
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  /// Collecting variant: buffers are returned in share order.
  std::vector<ResponseBuffer> get_samples_by_keys(std::span<const std::uint64_t> keys, std::size_t threads = 1,
                                                  std::size_t buffer_bytes = kDefaultBufferBytes) const {
    std::vector<std::vector<ResponseBuffer>> per_share(std::max<std::size_t>(threads, 1));
    get_samples_by_keys(keys, threads, buffer_bytes,
                        [&](ResponseBuffer&& b, std::size_t share) { per_share[share].push_back(std::move(b)); });
    std::vector<ResponseBuffer> out;
    for (auto& v : per_share)
      for (auto& b : v) out.push_back(std::move(b));
    return out;
  }

  /// Reads one sample directly at its (file, offset); bypasses grouping.
  Sample read_sample(std::uint64_t key) const {
    const auto& e = entry(key);
    Sample s{key, e.timestamp, e.label, std::vector<std::byte>(e.payload_bytes)};
    if (e.payload_bytes > 0) detail::FileHandle(files_[e.file_id]).read_exact(s.payload.data(), e.payload_bytes, e.byte_offset);
    return s;
  }

  /// All keys (or the given subset) in (timestamp, key) order.
  std::vector<std::uint64_t> keys_in_stream_order(std::optional<std::span<const std::uint64_t>> subset = std::nullopt) const {
    std::vector<std::uint64_t> keys;
    if (subset) {
      keys.assign(subset->begin(), subset->end());
    } else {
      keys.resize(index_.size());
      for (std::size_t i = 0; i < keys.size(); ++i) keys[i] = i;
    }
    std::stable_sort(keys.begin(), keys.end(), [&](std::uint64_t a, std::uint64_t b) {
      const auto ta = index_[a].timestamp, tb = index_[b].timestamp;
      return ta != tb ? ta < tb : a < b;
    });
    return keys;
  }

  /// Experiment-mode replay: every sample (or every sample of `subset`) exactly
  /// once, by timestamp with key-ascending tie-break, in batches of at most batch_size.
  std::vector<StreamBatch> replay(std::size_t batch_size,
                                  std::optional<std::span<const std::uint64_t>> subset = std::nullopt) const {
    if (batch_size == 0) throw Error(Errc::invalid_argument, "batch_size must be positive");
    const auto order = keys_in_stream_order(subset);
    std::vector<StreamBatch> batches;
    batches.reserve((order.size() + batch_size - 1) / batch_size);
    for (std::size_t i = 0; i < order.size(); i += batch_size) {
      StreamBatch b;
      const auto end = std::min(order.size(), i + batch_size);
      b.samples.reserve(end - i);
      for (std::size_t j = i; j < end; ++j) b.samples.push_back(meta(order[j]));
      b.watermark = b.samples.back().timestamp;
      batches.push_back(std::move(b));
    }
    return batches;
  }

  /// Partitions the stream into disjoint train and evaluation key sets.
  StreamSplit split_stream(double eval_fraction, SplitScheme scheme, std::uint64_t seed) const {
    if (!(eval_fraction > 0.0 && eval_fraction < 1.0))
      throw Error(Errc::invalid_argument, "eval_fraction must lie in (0, 1)");
    if (index_.empty()) throw Error(Errc::invalid_argument, "store is empty");
    StreamSplit split;
    const auto order = keys_in_stream_order();
    if (scheme == SplitScheme::every_kth) {
      // Sample i is evaluation data when floor((i+1)f) > floor(i f): exactly floor(N f) picks, evenly spaced.
      for (std::size_t i = 0; i < order.size(); ++i) {
        const bool pick = budget(i + 1, eval_fraction) > budget(i, eval_fraction);
        (pick ? split.eval : split.train).push_back(order[i]);
      }
    } else {
      const auto salt = derive_seed(seed, "split");
      for (auto k : order) {
        const double u = static_cast<double>(splitmix64(k ^ salt) >> 11) * 0x1.0p-53;
        (u < eval_fraction ? split.eval : split.train).push_back(k);
      }
    }
    return split;
  }

  // -- manifest persistence -------------------------------------------------

  nlohmann::json manifest() const {
    nlohmann::json files = nlohmann::json::array();
    for (const auto& r : registrations_) {
      nlohmann::json f{{"path", r.path},
                       {"wrapper", to_string(r.spec.kind)},
                       {"base_timestamp", r.base_timestamp}};
      if (r.spec.kind == WrapperKind::binary_fixed_record) f["record_bytes"] = r.spec.record_bytes;
      if (r.spec.kind == WrapperKind::csv) {
        f["label_column"] = r.spec.label_column;
        f["csv_header"] = r.spec.csv_header;
      }
      if (r.spec.kind == WrapperKind::single_sample) f["label"] = r.spec.label;
      if (!r.timestamp_offsets.empty()) f["timestamp_offsets"] = r.timestamp_offsets;
      files.push_back(std::move(f));
    }
    return {{"format", "ctflow-dataset"}, {"version", 1}, {"files", std::move(files)}};
  }

  void save_manifest(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw Error(Errc::io, "cannot write " + path.string());
    out << manifest().dump(1) << '\n';
  }

  /// Registers every file listed in a manifest. Relative paths resolve against the manifest directory.
  void load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::io, "cannot read " + path.string());
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::parse, path.string() + ": " + e.what());
    }
    if (doc.value("format", "") != "ctflow-dataset") throw Error(Errc::parse, path.string() + ": not a dataset manifest");
    for (const auto& f : doc.at("files")) {
      std::filesystem::path p = f.at("path").get<std::string>();
      if (p.is_relative()) p = path.parent_path() / p;
      FileRecordSpec spec;
      spec.kind = wrapper_kind_from_string(f.at("wrapper").get<std::string>());
      spec.record_bytes = f.value("record_bytes", 0u);
      spec.label_column = f.value("label_column", 0);
      spec.csv_header = f.value("csv_header", false);
      spec.label = f.value("label", std::int64_t{-1});
      std::vector<std::int64_t> offsets;
      if (f.contains("timestamp_offsets")) offsets = f.at("timestamp_offsets").get<std::vector<std::int64_t>>();
      register_file(p, spec, f.value("base_timestamp", std::int64_t{0}), offsets);
    }
  }

 private:
  struct Located {
    std::uint64_t offset;
    std::uint32_t bytes;
    std::int64_t label;
  };

  static std::vector<Located> scan_binary(const std::string& path, const FileRecordSpec& spec) {
    detail::FileHandle f(path);
    const auto size = f.size();
    std::byte header[kMdsfHeaderBytes];
    if (size < kMdsfHeaderBytes) throw Error(Errc::parse, path + ": truncated header at byte offset " + std::to_string(size));
    f.read_exact(header, kMdsfHeaderBytes, 0);
    if (!has_magic({header, kMdsfHeaderBytes}, kMdsfMagic)) throw Error(Errc::parse, path + ": bad magic at byte offset 0");
    const auto version = le::load<std::uint32_t>(header + 4);
    if (version != kMdsfVersion) throw Error(Errc::parse, path + ": unsupported version at byte offset 4");
    const auto record_bytes = le::load<std::uint32_t>(header + 8);
    const auto count = le::load<std::uint32_t>(header + 12);
    if (record_bytes < 9) throw Error(Errc::parse, path + ": record_bytes < 9 at byte offset 8");
    if (spec.record_bytes != 0 && spec.record_bytes != record_bytes)
      throw Error(Errc::parse, path + ": record_bytes " + std::to_string(record_bytes) + " differs from spec at byte offset 8");
    const std::uint64_t expected = kMdsfHeaderBytes + std::uint64_t{count} * record_bytes;
    if (size != expected)
      throw Error(Errc::parse, path + ": expected " + std::to_string(expected) + " bytes, file ends at byte offset " +
                                   std::to_string(size));

    std::vector<Located> out;
    out.reserve(count);
    const std::size_t per_chunk = std::max<std::size_t>(1, kMaxCoalescedRead / record_bytes);
    std::vector<std::byte> chunk(per_chunk * record_bytes);
    for (std::size_t i = 0; i < count; i += per_chunk) {
      const auto n = std::min<std::size_t>(per_chunk, count - i);
      const std::uint64_t base = kMdsfHeaderBytes + std::uint64_t{i} * record_bytes;
      f.read_exact(chunk.data(), n * record_bytes, base);
      for (std::size_t j = 0; j < n; ++j) {
        const auto label = le::load<std::int64_t>(chunk.data() + j * record_bytes);
        out.push_back({base + j * record_bytes + 8, record_bytes - 8, label});
      }
    }
    return out;
  }

  static std::vector<Located> scan_csv(const std::string& path, const FileRecordSpec& spec) {
    const auto bytes = detail::read_file(path);
    const auto* text = reinterpret_cast<const char*>(bytes.data());
    std::vector<Located> out;
    std::size_t pos = 0;
    bool first = true;
    while (pos < bytes.size()) {
      std::size_t end = pos;
      while (end < bytes.size() && text[end] != '\n') ++end;
      std::size_t line_end = end;
      if (line_end > pos && text[line_end - 1] == '\r') --line_end;
      const bool skip = (first && spec.csv_header) || line_end == pos;
      first = false;
      if (!skip) {
        // locate the label column
        std::size_t field_begin = pos;
        int column = 0;
        while (column < spec.label_column) {
          while (field_begin < line_end && text[field_begin] != ',') ++field_begin;
          if (field_begin >= line_end)
            throw Error(Errc::parse, path + ": missing label column at byte offset " + std::to_string(pos));
          ++field_begin;
          ++column;
        }
        std::size_t field_end = field_begin;
        while (field_end < line_end && text[field_end] != ',') ++field_end;
        std::int64_t label = 0;
        auto [ptr, ec] = std::from_chars(text + field_begin, text + field_end, label);
        if (ec != std::errc{} || ptr != text + field_end)
          throw Error(Errc::parse, path + ": invalid label at byte offset " + std::to_string(field_begin));
        out.push_back({pos, static_cast<std::uint32_t>(line_end - pos), label});
      }
      pos = end + 1;
    }
    return out;
  }

  template <typename Sink>
  void read_share(std::span<const std::uint64_t> keys, std::size_t buffer_bytes, std::size_t share, Sink& sink) const {
    std::vector<std::uint64_t> order(keys.begin(), keys.end());
    std::stable_sort(order.begin(), order.end(), [&](std::uint64_t a, std::uint64_t b) {
      const auto& ea = index_[a];
      const auto& eb = index_[b];
      if (ea.file_id != eb.file_id) return ea.file_id < eb.file_id;
      return ea.byte_offset < eb.byte_offset;
    });

    ResponseBuffer buffer;
    std::vector<std::byte> scratch;
    std::size_t i = 0;
    while (i < order.size()) {
      const auto file_id = index_[order[i]].file_id;
      detail::FileHandle file(files_[file_id]);
      open_count_.fetch_add(1, std::memory_order_relaxed);
      while (i < order.size() && index_[order[i]].file_id == file_id) {
        // coalesce a run of adjacent (or repeated) records into a single read
        const auto run_begin = index_[order[i]].byte_offset;
        std::uint64_t run_end = run_begin + index_[order[i]].payload_bytes;
        std::size_t j = i + 1;
        while (j < order.size()) {
          const auto& e = index_[order[j]];
          if (e.file_id != file_id || e.byte_offset > run_end + 8) break;
          const auto end = std::max(run_end, e.byte_offset + e.payload_bytes);
          if (end - run_begin > kMaxCoalescedRead) break;
          run_end = end;
          ++j;
        }
        scratch.resize(run_end - run_begin);
        if (!scratch.empty()) file.read_exact(scratch.data(), scratch.size(), run_begin);
        for (; i < j; ++i) {
          const auto& e = index_[order[i]];
          buffer.push(order[i], e.label, {scratch.data() + (e.byte_offset - run_begin), e.payload_bytes});
          if (buffer.bytes.size() >= buffer_bytes) {
            sink(std::move(buffer), share);
            buffer = ResponseBuffer{};
          }
        }
      }
    }
    if (!buffer.empty()) sink(std::move(buffer), share);
  }

  std::vector<std::string> files_;
  std::unordered_set<std::string> registered_paths_;
  std::vector<FileRegistration> registrations_;
  std::vector<SampleIndexEntry> index_;
  mutable std::atomic<std::uint64_t> open_count_{0};
};

}  // namespace ctflow

#endif  // CTFLOW_STORAGE_HPP
