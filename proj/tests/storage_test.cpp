#include <gtest/gtest.h>

#include <fstream>
#include <random>
#include <set>

#include "test_util.hpp"

using namespace ctflow;
using ctflow::testing::TempDir;

namespace {

std::vector<std::byte> random_bytes(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::byte> out(n);
  for (auto& b : out) b = static_cast<std::byte>(rng() & 0xFF);
  return out;
}

}  // namespace

TEST(Mdsf, RandomizedRoundTripIsByteExact) {
  TempDir dir("mdsf");
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 25; ++trial) {
    const auto record = static_cast<std::uint32_t>(9 + rng() % 200);
    const std::size_t count = rng() % 300;
    const auto path = dir / ("f" + std::to_string(trial) + ".mdsf");
    std::vector<std::int64_t> labels;
    std::vector<std::byte> payloads;
    {
      MdsfWriter w(path, record);
      for (std::size_t i = 0; i < count; ++i) {
        const auto p = random_bytes(record - 8, rng);
        labels.push_back(static_cast<std::int64_t>(rng()));
        payloads.insert(payloads.end(), p.begin(), p.end());
        w.append(labels.back(), p);
      }
    }
    const auto back = read_mdsf(path);
    EXPECT_EQ(back.record_bytes, record);
    EXPECT_EQ(back.labels, labels);
    EXPECT_EQ(back.payloads, payloads);

    // write -> read -> write produces the same bytes
    const auto copy = dir / ("g" + std::to_string(trial) + ".mdsf");
    {
      MdsfWriter w(copy, back.record_bytes);
      for (std::size_t i = 0; i < back.labels.size(); ++i)
        w.append(back.labels[i], std::span(back.payloads).subspan(i * (record - 8), record - 8));
    }
    EXPECT_EQ(detail::read_file(path), detail::read_file(copy));
  }
}

TEST(Mdsf, TruncatedFileReportsOffset) {
  TempDir dir("mdsf_bad");
  const auto path = dir / "bad.mdsf";
  {
    MdsfWriter w(path, 16);
    std::vector<std::byte> p(8);
    w.append(1, p);
    w.append(2, p);
  }
  std::filesystem::resize_file(path, 16 + 16 + 5);
  SampleStore store;
  try {
    store.register_file(path, {}, 0);
    FAIL() << "expected a parse error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::parse);
    EXPECT_NE(std::string(e.what()).find("offset"), std::string::npos) << e.what();
  }
  EXPECT_EQ(store.size(), 0u);
}

TEST(SampleStore, RegistrationAssignsDenseKeysAndRejectsDuplicates) {
  TempDir dir("reg");
  std::mt19937_64 rng(3);
  const auto x = ctflow::testing::f32_matrix(10, 3, rng);
  std::vector<std::int64_t> y(10);
  for (std::size_t i = 0; i < 10; ++i) y[i] = static_cast<std::int64_t>(i % 2);
  const auto a = ctflow::testing::write_rows(dir / "a.mdsf", x, y);
  const auto b = ctflow::testing::write_rows(dir / "b.mdsf", x, y);
  SampleStore store;
  const auto ka = store.register_file(a, {}, 100);
  const auto kb = store.register_file(b, {}, 50);
  EXPECT_EQ(ka.front(), 0u);
  EXPECT_EQ(kb.front(), 10u);
  EXPECT_THROW(
      {
        try {
          store.register_file(a, {}, 0);
        } catch (const Error& e) {
          EXPECT_EQ(e.code(), Errc::duplicate);
          throw;
        }
      },
      Error);
  EXPECT_EQ(store.size(), 20u);
  EXPECT_EQ(store.meta(3).timestamp, 100);
  EXPECT_EQ(store.meta(13).timestamp, 50);
  // stream order puts the earlier file first
  const auto order = store.keys_in_stream_order();
  EXPECT_EQ(order.front(), 10u);
  EXPECT_EQ(order[10], 0u);
}

TEST(SampleStore, MissingFileIsAnIoError) {
  SampleStore store;
  try {
    store.register_file("/nonexistent/x.mdsf", {}, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::io);
  }
}

TEST(SampleStore, KeyRetrievalReturnsEachKeyOnceAndGroupsByFile) {
  TempDir dir("keys");
  std::mt19937_64 rng(5);
  SampleStore store;
  std::vector<std::vector<std::byte>> expected;
  for (int f = 0; f < 4; ++f) {
    const auto path = dir / ("f" + std::to_string(f) + ".mdsf");
    MdsfWriter w(path, 24);
    for (int i = 0; i < 50; ++i) {
      expected.push_back(random_bytes(16, rng));
      w.append(f * 100 + i, expected.back());
    }
    w.close();
    store.register_file(path, {}, f);
  }
  std::vector<std::uint64_t> keys(store.size());
  std::iota(keys.begin(), keys.end(), 0);
  std::shuffle(keys.begin(), keys.end(), rng);
  keys.resize(120);
  for (std::size_t threads : {1u, 2u, 3u, 8u}) {
    store.reset_open_count();
    const auto buffers = store.get_samples_by_keys(keys, threads, 256);
    std::multiset<std::uint64_t> got;
    for (const auto& b : buffers)
      for (std::size_t i = 0; i < b.size(); ++i) {
        got.insert(b.keys[i]);
        const auto& want = expected[b.keys[i]];
        EXPECT_TRUE(std::equal(want.begin(), want.end(), b.payload(i).begin()));
        EXPECT_EQ(b.labels[i], static_cast<std::int64_t>((b.keys[i] / 50) * 100 + b.keys[i] % 50));
      }
    EXPECT_EQ(got, std::multiset<std::uint64_t>(keys.begin(), keys.end()));
    // one open per (share, file) pair at most
    EXPECT_LE(store.open_count(), threads * store.num_files());
  }
}

TEST(SampleStore, UnknownKeyIsNotFound) {
  TempDir dir("nf");
  std::mt19937_64 rng(1);
  const auto x = ctflow::testing::f32_matrix(3, 2, rng);
  const std::vector<std::int64_t> y{0, 1, 0};
  SampleStore store;
  store.register_file(ctflow::testing::write_rows(dir / "a.mdsf", x, y), {}, 0);
  const std::vector<std::uint64_t> keys{0, 7};
  try {
    store.get_samples_by_keys(keys);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::not_found);
  }
}

TEST(SampleStore, CsvAndSingleSampleWrappers) {
  TempDir dir("csv");
  {
    std::ofstream out(dir / "rows.csv");
    out << "f0,label,f1\n0.5,1,2\n-1,0,3\n";
  }
  {
    std::ofstream out(dir / "blob.bin", std::ios::binary);
    out << "abcdef";
  }
  SampleStore store;
  FileRecordSpec csv;
  csv.kind = WrapperKind::csv;
  csv.label_column = 1;
  csv.csv_header = true;
  const auto keys = store.register_file(dir / "rows.csv", csv, 0);
  ASSERT_EQ(keys.size(), 2u);
  EXPECT_EQ(store.meta(keys[0]).label, 1);
  EXPECT_EQ(store.meta(keys[1]).label, 0);
  const auto row = store.read_sample(keys[1]);
  EXPECT_EQ(std::string(reinterpret_cast<const char*>(row.payload.data()), row.payload.size()), "-1,0,3");

  FileRecordSpec single;
  single.kind = WrapperKind::single_sample;
  single.label = 4;
  const auto k = store.register_file(dir / "blob.bin", single, 9);
  ASSERT_EQ(k.size(), 1u);
  const auto s = store.read_sample(k[0]);
  EXPECT_EQ(s.label, 4);
  EXPECT_EQ(s.timestamp, 9);
  EXPECT_EQ(s.payload.size(), 6u);
}

TEST(SampleStore, CsvBadLabelIsParseError) {
  TempDir dir("csvbad");
  {
    std::ofstream out(dir / "rows.csv");
    out << "1,2\nx,3\n";
  }
  SampleStore store;
  FileRecordSpec csv;
  csv.kind = WrapperKind::csv;
  try {
    store.register_file(dir / "rows.csv", csv, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::parse);
  }
}

TEST(SampleStore, ReplayCoversStreamInOrder) {
  TempDir dir("replay");
  std::mt19937_64 rng(9);
  const auto x = ctflow::testing::f32_matrix(37, 2, rng);
  std::vector<std::int64_t> y(37, 0), offsets(37);
  for (std::size_t i = 0; i < 37; ++i) offsets[i] = static_cast<std::int64_t>((i * 7) % 37);
  SampleStore store;
  store.register_file(ctflow::testing::write_rows(dir / "a.mdsf", x, y), {}, 1000, offsets);
  for (std::size_t bs : {1u, 5u, 37u, 100u}) {
    const auto batches = store.replay(bs);
    std::vector<std::int64_t> ts;
    for (const auto& b : batches) {
      EXPECT_LE(b.samples.size(), bs);
      EXPECT_EQ(b.watermark, b.samples.back().timestamp);
      for (const auto& s : b.samples) ts.push_back(s.timestamp);
    }
    ASSERT_EQ(ts.size(), 37u);
    EXPECT_TRUE(std::is_sorted(ts.begin(), ts.end()));
  }
}

TEST(SampleStore, SplitsPartitionTheStream) {
  TempDir dir("split");
  std::mt19937_64 rng(2);
  const auto x = ctflow::testing::f32_matrix(1000, 2, rng);
  std::vector<std::int64_t> y(1000, 1);
  SampleStore store;
  store.register_file(ctflow::testing::write_rows(dir / "a.mdsf", x, y), {}, 0);
  for (auto scheme : {SplitScheme::every_kth, SplitScheme::hash_modulo}) {
    const auto split = store.split_stream(0.2, scheme, 5);
    std::set<std::uint64_t> all(split.train.begin(), split.train.end());
    for (auto k : split.eval) EXPECT_TRUE(all.insert(k).second) << "key in both splits";
    EXPECT_EQ(all.size(), 1000u);
    if (scheme == SplitScheme::every_kth) EXPECT_EQ(split.eval.size(), 200u);
    else EXPECT_NEAR(static_cast<double>(split.eval.size()), 200.0, 60.0);
    EXPECT_EQ(split.train, store.split_stream(0.2, scheme, 5).train);
  }
  EXPECT_THROW(store.split_stream(1.0, SplitScheme::every_kth, 0), Error);
}

TEST(SampleStore, ManifestRoundTrip) {
  TempDir dir("manifest");
  std::mt19937_64 rng(4);
  const auto x = ctflow::testing::f32_matrix(5, 2, rng);
  std::vector<std::int64_t> y(5, 0), offsets{0, 1, 1, 4, 9};
  SampleStore store;
  store.register_file(ctflow::testing::write_rows(dir / "a.mdsf", x, y), {}, 3, offsets);
  store.save_manifest(dir / "dataset.json");
  SampleStore again;
  again.load_manifest(dir / "dataset.json");
  ASSERT_EQ(again.size(), store.size());
  for (std::uint64_t k = 0; k < store.size(); ++k) {
    EXPECT_EQ(again.meta(k), store.meta(k));
    EXPECT_EQ(again.read_sample(k).payload, store.read_sample(k).payload);
  }
}
