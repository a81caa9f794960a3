#ifndef CTFLOW_SYNTHETIC_HPP
#define CTFLOW_SYNTHETIC_HPP

// Synthetic datasets: Gaussian class streams with abrupt mean shifts, and
// fixed-record binary files for throughput runs.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "ctflow/core.hpp"
#include "ctflow/learner.hpp"
#include "ctflow/storage.hpp"

namespace ctflow {

/// Two classes in `dims` dimensions. In segment s (segments are separated by
/// the shift points) the class means are (-separation + s*step, s*tilt*step, 0, ...)
/// and (separation + s*step, s*tilt*step, 0, ...), with isotropic noise.
struct GaussianStreamSpec {
  std::size_t num_samples = 20000;
  std::size_t dims = 8;
  std::vector<std::size_t> shift_points{5000, 10000, 15000};
  double separation = 2.5;
  double step = 2.0;
  double tilt = 4.0;
  double noise = 1.0;
  std::uint64_t seed = 0;
};

struct SyntheticStream {
  Matrix features;
  std::vector<std::int64_t> labels;
  std::vector<std::int64_t> timestamps;
  std::vector<std::size_t> segments;
};

inline SyntheticStream generate_gaussian_stream(const GaussianStreamSpec& spec) {
  if (spec.dims < 2) throw Error(Errc::invalid_argument, "gaussian stream needs at least 2 dimensions");
  if (!std::is_sorted(spec.shift_points.begin(), spec.shift_points.end()))
    throw Error(Errc::invalid_argument, "shift points must be ascending");
  std::mt19937_64 rng(derive_seed(spec.seed, "gaussian_stream"));
  std::normal_distribution<double> noise(0.0, spec.noise);
  std::bernoulli_distribution coin(0.5);
  SyntheticStream out;
  out.features = Matrix(spec.num_samples, spec.dims);
  for (std::size_t i = 0; i < spec.num_samples; ++i) {
    const auto segment = static_cast<std::size_t>(
        std::upper_bound(spec.shift_points.begin(), spec.shift_points.end(), i) - spec.shift_points.begin());
    const auto s = static_cast<double>(segment);
    const bool positive = coin(rng);
    auto row = out.features.row(i);
    for (auto& v : row) v = noise(rng);
    row[0] += (positive ? spec.separation : -spec.separation) + s * spec.step;
    row[1] += s * spec.tilt * spec.step;
    out.labels.push_back(positive ? 1 : 0);
    out.timestamps.push_back(static_cast<std::int64_t>(i));
    out.segments.push_back(segment);
  }
  return out;
}

/// Writes the stream as one MDSF file (f32 payloads) plus a dataset manifest
/// carrying per-sample timestamps. Returns the manifest path.
inline std::filesystem::path write_stream(const SyntheticStream& stream, const std::filesystem::path& dir,
                                          const std::string& name) {
  std::filesystem::create_directories(dir);
  const auto file = dir / (name + ".mdsf");
  {
    MdsfWriter writer(file, static_cast<std::uint32_t>(8 + 4 * stream.features.cols));
    for (std::size_t i = 0; i < stream.features.rows; ++i)
      writer.append(stream.labels[i], encode_f32_features(stream.features.row(i)));
    writer.close();
  }
  nlohmann::json f{{"path", file.filename().string()},
                   {"wrapper", "binary_fixed_record"},
                   {"base_timestamp", 0},
                   {"record_bytes", 8 + 4 * stream.features.cols},
                   {"timestamp_offsets", stream.timestamps}};
  const auto manifest = dir / (name + ".json");
  std::ofstream out(manifest);
  out << nlohmann::json{{"format", "ctflow-dataset"}, {"version", 1}, {"files", nlohmann::json::array({f})}}.dump(1) << '\n';
  if (!out) throw Error(Errc::io, "cannot write " + manifest.string());
  return manifest;
}

/// Fixed-size records split across files of `records_per_file`; each file
/// carries one base timestamp (its index). Payload: f32 features uniform in
/// [-1, 1), zero padded; label = feature 0 > 0. Returns the manifest path.
inline std::filesystem::path write_record_dataset(const std::filesystem::path& dir, std::size_t num_records,
                                                  std::uint32_t record_bytes = 160,
                                                  std::size_t records_per_file = 180000, std::uint64_t seed = 0) {
  if (record_bytes < 12) throw Error(Errc::invalid_argument, "record_bytes must hold at least one feature");
  if (records_per_file == 0) throw Error(Errc::invalid_argument, "records_per_file must be positive");
  std::filesystem::create_directories(dir);
  std::mt19937_64 rng(derive_seed(seed, "records"));
  std::uniform_real_distribution<float> unit(-1.0f, 1.0f);
  const std::size_t features = (record_bytes - 8) / 4;
  std::vector<std::byte> payload(record_bytes - 8);
  nlohmann::json files = nlohmann::json::array();
  for (std::size_t first = 0, f = 0; first < num_records; first += records_per_file, ++f) {
    const auto name = "records_" + std::to_string(f) + ".mdsf";
    MdsfWriter writer(dir / name, record_bytes);
    const auto n = std::min(records_per_file, num_records - first);
    for (std::size_t i = 0; i < n; ++i) {
      std::fill(payload.begin(), payload.end(), std::byte{0});
      float x0 = 0.0f;
      for (std::size_t j = 0; j < features; ++j) {
        const float v = unit(rng);
        if (j == 0) x0 = v;
        le::store<float>(payload.data() + 4 * j, v);
      }
      writer.append(x0 > 0.0f ? 1 : 0, payload);
    }
    writer.close();
    files.push_back({{"path", name}, {"wrapper", "binary_fixed_record"}, {"base_timestamp", f}, {"record_bytes", record_bytes}});
  }
  const auto manifest = dir / "dataset.json";
  std::ofstream out(manifest);
  out << nlohmann::json{{"format", "ctflow-dataset"}, {"version", 1}, {"files", files}}.dump(1) << '\n';
  if (!out) throw Error(Errc::io, "cannot write " + manifest.string());
  return manifest;
}

}  // namespace ctflow

#endif  // CTFLOW_SYNTHETIC_HPP
