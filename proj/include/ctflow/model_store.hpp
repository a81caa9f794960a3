#ifndef CTFLOW_MODEL_STORE_HPP
#define CTFLOW_MODEL_STORE_HPP

// Model storage: full snapshots every k-th model, deltas (xor or subtraction)
// against the previous model otherwise; lossless reconstruction through the chain.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctflow/core.hpp"
#include "ctflow/storage.hpp"

namespace ctflow {

struct WeightTensor {
  std::vector<std::uint32_t> dims;
  std::vector<double> values;  // row-major

  friend bool operator==(const WeightTensor&, const WeightTensor&) = default;
};

inline WeightTensor to_tensor(const Matrix& m) {
  return {{static_cast<std::uint32_t>(m.rows), static_cast<std::uint32_t>(m.cols)}, m.data};
}

inline Matrix to_matrix(const WeightTensor& t) {
  if (t.dims.size() != 2) throw Error(Errc::shape_mismatch, "expected a rank-2 weight tensor");
  Matrix m(t.dims[0], t.dims[1]);
  m.data = t.values;
  return m;
}

// MDMW: magic, version u32, rank u32, dims u32 each, then binary64 LE values.
inline constexpr std::string_view kMdmwMagic = "MDMW";
inline constexpr std::uint32_t kMdmwVersion = 1;

inline std::vector<std::byte> encode_mdmw(const WeightTensor& t) {
  std::size_t count = 1;
  for (auto d : t.dims) count *= d;
  if (count != t.values.size()) throw Error(Errc::shape_mismatch, "tensor dims do not match value count");
  std::vector<std::byte> out;
  out.reserve(12 + 4 * t.dims.size() + 8 * t.values.size());
  append_magic(out, kMdmwMagic);
  le::append<std::uint32_t>(out, kMdmwVersion);
  le::append<std::uint32_t>(out, static_cast<std::uint32_t>(t.dims.size()));
  for (auto d : t.dims) le::append<std::uint32_t>(out, d);
  for (double v : t.values) le::append<double>(out, v);
  return out;
}

inline WeightTensor decode_mdmw(std::span<const std::byte> bytes) {
  if (bytes.size() < 12 || !has_magic(bytes, kMdmwMagic)) throw Error(Errc::parse, "MDMW: bad header at byte offset 0");
  if (le::load<std::uint32_t>(bytes.data() + 4) != kMdmwVersion) throw Error(Errc::parse, "MDMW: unsupported version at byte offset 4");
  const auto rank = le::load<std::uint32_t>(bytes.data() + 8);
  if (bytes.size() < 12 + 4 * std::size_t{rank}) throw Error(Errc::parse, "MDMW: truncated dims at byte offset 12");
  WeightTensor t;
  std::size_t count = 1;
  for (std::size_t i = 0; i < rank; ++i) {
    t.dims.push_back(le::load<std::uint32_t>(bytes.data() + 12 + 4 * i));
    count *= t.dims.back();
  }
  const std::size_t start = 12 + 4 * std::size_t{rank};
  if (bytes.size() != start + 8 * count) throw Error(Errc::parse, "MDMW: size mismatch at byte offset " + std::to_string(bytes.size()));
  t.values.resize(count);
  for (std::size_t i = 0; i < count; ++i) t.values[i] = le::load<double>(bytes.data() + start + 8 * i);
  return t;
}

enum class DeltaOperator { xor_bits, subtract };
enum class ArtifactKind { full, delta };

inline const char* to_string(DeltaOperator op) { return op == DeltaOperator::xor_bits ? "xor" : "subtract"; }

inline DeltaOperator delta_operator_from_string(std::string_view s) {
  if (s == "xor") return DeltaOperator::xor_bits;
  if (s == "subtract" || s == "sub") return DeltaOperator::subtract;
  throw Error(Errc::invalid_argument, "unknown delta operator '" + std::string(s) + "'");
}

struct ModelArtifact {
  std::uint64_t id = 0;
  ArtifactKind kind = ArtifactKind::full;
  std::optional<std::uint64_t> base;
  DeltaOperator op = DeltaOperator::xor_bits;
  std::vector<std::byte> payload;
  std::uint64_t checksum = 0;
};

struct ModelStoragePolicy {
  std::size_t full_every = 1;
  DeltaOperator op = DeltaOperator::xor_bits;
};

namespace detail {

// Delta payload: "MDMD", version, operator, word count, then
//   xor:      count u64 words (bits(a) ^ bits(b))
//   subtract: count f64 differences (a - b), ceil(count / 8) mask bytes, and
//             one u64 correction per masked word: bits(a) ^ bits(b + (a - b)).
inline constexpr std::string_view kDeltaMagic = "MDMD";

inline std::vector<std::byte> encode_delta(const WeightTensor& target, const WeightTensor& base, DeltaOperator op) {
  if (target.dims != base.dims) throw Error(Errc::shape_mismatch, "delta target and base shapes differ");
  const std::size_t n = target.values.size();
  std::vector<std::byte> out;
  append_magic(out, kDeltaMagic);
  le::append<std::uint32_t>(out, 1);
  le::append<std::uint32_t>(out, op == DeltaOperator::xor_bits ? 0u : 1u);
  le::append<std::uint32_t>(out, static_cast<std::uint32_t>(n));
  if (op == DeltaOperator::xor_bits) {
    for (std::size_t i = 0; i < n; ++i)
      le::append<std::uint64_t>(out, std::bit_cast<std::uint64_t>(target.values[i]) ^ std::bit_cast<std::uint64_t>(base.values[i]));
    return out;
  }
  std::vector<std::uint8_t> mask((n + 7) / 8, 0);
  std::vector<std::uint64_t> corrections;
  for (std::size_t i = 0; i < n; ++i) {
    const double diff = target.values[i] - base.values[i];
    le::append<double>(out, diff);
    const auto rebuilt = std::bit_cast<std::uint64_t>(base.values[i] + diff);
    const auto wanted = std::bit_cast<std::uint64_t>(target.values[i]);
    if (rebuilt != wanted) {
      mask[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
      corrections.push_back(rebuilt ^ wanted);
    }
  }
  for (auto m : mask) out.push_back(static_cast<std::byte>(m));
  for (auto c : corrections) le::append<std::uint64_t>(out, c);
  return out;
}

inline std::vector<double> apply_delta(std::span<const std::byte> payload, const std::vector<double>& base) {
  if (payload.size() < 16 || !has_magic(payload, kDeltaMagic)) throw Error(Errc::parse, "delta: bad header at byte offset 0");
  const auto op = le::load<std::uint32_t>(payload.data() + 8);
  const auto n = le::load<std::uint32_t>(payload.data() + 12);
  if (n != base.size()) throw Error(Errc::shape_mismatch, "delta length differs from base model");
  std::vector<double> out(n);
  const std::byte* p = payload.data() + 16;
  const std::byte* end = payload.data() + payload.size();
  if (static_cast<std::size_t>(end - p) < 8 * std::size_t{n}) throw Error(Errc::parse, "delta: truncated words");
  if (op == 0) {
    for (std::size_t i = 0; i < n; ++i)
      out[i] = std::bit_cast<double>(std::bit_cast<std::uint64_t>(base[i]) ^ le::load<std::uint64_t>(p + 8 * i));
    return out;
  }
  const std::byte* mask = p + 8 * std::size_t{n};
  const std::byte* corr = mask + (n + 7) / 8;
  if (corr > end) throw Error(Errc::parse, "delta: truncated mask");
  for (std::size_t i = 0; i < n; ++i) {
    auto bits = std::bit_cast<std::uint64_t>(base[i] + le::load<double>(p + 8 * i));
    if ((static_cast<std::uint8_t>(mask[i / 8]) >> (i % 8)) & 1u) {
      if (corr + 8 > end) throw Error(Errc::parse, "delta: missing correction word");
      bits ^= le::load<std::uint64_t>(corr);
      corr += 8;
    }
    out[i] = std::bit_cast<double>(bits);
  }
  return out;
}

}  // namespace detail

/// Append-only model store, optionally mirrored to a directory as
/// `model_<id>.mdmw` / `model_<id>.delta` plus `manifest.json`.
class ModelStore {
 public:
  explicit ModelStore(ModelStoragePolicy policy = {}, std::optional<std::filesystem::path> dir = std::nullopt)
      : policy_(policy), dir_(std::move(dir)) {
    if (policy_.full_every == 0) throw Error(Errc::invalid_argument, "full_every must be >= 1");
    if (dir_) std::filesystem::create_directories(*dir_);
  }

  /// Reopens a store written to `dir`.
  static ModelStore open(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw Error(Errc::io, "cannot read " + (dir / "manifest.json").string());
    const auto doc = nlohmann::json::parse(in);
    ModelStoragePolicy policy{doc.at("full_every").get<std::size_t>(), delta_operator_from_string(doc.at("operator").get<std::string>())};
    ModelStore store(policy, std::nullopt);
    for (const auto& a : doc.at("artifacts")) {
      ModelArtifact art;
      art.id = a.at("id").get<std::uint64_t>();
      art.kind = a.at("kind").get<std::string>() == "full" ? ArtifactKind::full : ArtifactKind::delta;
      if (!a.at("base").is_null()) art.base = a.at("base").get<std::uint64_t>();
      if (a.contains("operator") && !a.at("operator").is_null()) art.op = delta_operator_from_string(a.at("operator").get<std::string>());
      art.checksum = std::stoull(a.at("checksum").get<std::string>(), nullptr, 16);
      art.payload = detail::read_file(dir / artifact_file(art));
      store.artifacts_.push_back(std::move(art));
    }
    if (!store.artifacts_.empty()) store.last_ = store.load(store.artifacts_.back().id);
    store.dir_ = dir;
    return store;
  }

  const ModelArtifact& store(const WeightTensor& weights) {
    ModelArtifact art;
    art.id = artifacts_.size();
    const bool full = art.id % policy_.full_every == 0;
    if (full) {
      art.kind = ArtifactKind::full;
      art.payload = encode_mdmw(weights);
    } else {
      if (weights.dims != last_.dims)
        throw Error(Errc::shape_mismatch, "model " + std::to_string(art.id) + " shape differs from its delta base");
      art.kind = ArtifactKind::delta;
      art.base = art.id - 1;
      art.op = policy_.op;
      art.payload = detail::encode_delta(weights, last_, policy_.op);
    }
    art.checksum = crc64(art.payload);
    last_ = weights;
    artifacts_.push_back(std::move(art));
    if (dir_) persist(artifacts_.back());
    return artifacts_.back();
  }

  /// Bit-exact reconstruction from the nearest full snapshot.
  WeightTensor load(std::uint64_t id) const {
    if (id >= artifacts_.size()) throw Error(Errc::not_found, "no model with id " + std::to_string(id));
    std::vector<const ModelArtifact*> chain;
    std::optional<std::uint64_t> cursor = id;
    while (cursor) {
      if (*cursor >= artifacts_.size()) throw Error(Errc::broken_chain, "model " + std::to_string(*cursor) + " is missing");
      const auto& art = artifacts_[*cursor];
      if (crc64(art.payload) != art.checksum) throw Error(Errc::checksum, "checksum mismatch for model " + std::to_string(art.id));
      chain.push_back(&art);
      if (art.kind == ArtifactKind::full) break;
      if (!art.base || *art.base >= art.id) throw Error(Errc::broken_chain, "model " + std::to_string(art.id) + " has no valid base");
      cursor = art.base;
      if (chain.size() > artifacts_.size()) throw Error(Errc::broken_chain, "delta chain does not terminate");
    }
    if (chain.empty() || chain.back()->kind != ArtifactKind::full)
      throw Error(Errc::broken_chain, "delta chain of model " + std::to_string(id) + " has no full snapshot");
    WeightTensor t = decode_mdmw(chain.back()->payload);
    for (auto it = chain.rbegin() + 1; it != chain.rend(); ++it) t.values = detail::apply_delta((*it)->payload, t.values);
    return t;
  }

  std::size_t size() const { return artifacts_.size(); }
  const ModelArtifact& artifact(std::uint64_t id) const { return artifacts_.at(id); }
  /// Mutable access, used to simulate corruption in tests.
  ModelArtifact& artifact_mut(std::uint64_t id) { return artifacts_.at(id); }
  const ModelStoragePolicy& policy() const { return policy_; }

  nlohmann::json manifest() const {
    nlohmann::json arts = nlohmann::json::array();
    for (const auto& a : artifacts_) {
      arts.push_back({{"id", a.id},
                      {"kind", a.kind == ArtifactKind::full ? "full" : "delta"},
                      {"base", a.base ? nlohmann::json(*a.base) : nlohmann::json(nullptr)},
                      {"operator", a.kind == ArtifactKind::delta ? nlohmann::json(to_string(a.op)) : nlohmann::json(nullptr)},
                      {"checksum", hex64(a.checksum)}});
    }
    return {{"full_every", policy_.full_every}, {"operator", to_string(policy_.op)}, {"artifacts", std::move(arts)}};
  }

 private:
  static std::string artifact_file(const ModelArtifact& a) {
    return "model_" + std::to_string(a.id) + (a.kind == ArtifactKind::full ? ".mdmw" : ".delta");
  }

  void persist(const ModelArtifact& a) const {
    {
      std::ofstream out(*dir_ / artifact_file(a), std::ios::binary | std::ios::trunc);
      out.write(reinterpret_cast<const char*>(a.payload.data()), static_cast<std::streamsize>(a.payload.size()));
      if (!out) throw Error(Errc::io, "cannot write model artifact");
    }
    std::ofstream m(*dir_ / "manifest.json", std::ios::trunc);
    m << manifest().dump(1) << '\n';
  }

  ModelStoragePolicy policy_;
  std::optional<std::filesystem::path> dir_;
  std::vector<ModelArtifact> artifacts_;
  WeightTensor last_;
};

}  // namespace ctflow

#endif  // CTFLOW_MODEL_STORE_HPP
