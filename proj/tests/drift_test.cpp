#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "test_util.hpp"

using namespace ctflow;

namespace {

double mmd2_oracle(const Matrix& x, const Matrix& y, double h) {
  auto k = [&](std::span<const double> a, std::span<const double> b) {
    double d = 0;
    for (std::size_t i = 0; i < a.size(); ++i) d += (a[i] - b[i]) * (a[i] - b[i]);
    return std::exp(-d / (2 * h * h));
  };
  double xx = 0, yy = 0, xy = 0;
  for (std::size_t i = 0; i < x.rows; ++i)
    for (std::size_t j = 0; j < x.rows; ++j) xx += k(x.row(i), x.row(j));
  for (std::size_t i = 0; i < y.rows; ++i)
    for (std::size_t j = 0; j < y.rows; ++j) yy += k(y.row(i), y.row(j));
  for (std::size_t i = 0; i < x.rows; ++i)
    for (std::size_t j = 0; j < y.rows; ++j) xy += k(x.row(i), y.row(j));
  const double nx = static_cast<double>(x.rows), ny = static_cast<double>(y.rows);
  return std::max(0.0, xx / (nx * nx) + yy / (ny * ny) - 2 * xy / (nx * ny));
}

double median_oracle(const Matrix& x, const Matrix& y) {
  Matrix all = x;
  for (std::size_t i = 0; i < y.rows; ++i) all.append_row(y.row(i));
  std::vector<double> d;
  for (std::size_t i = 0; i < all.rows; ++i)
    for (std::size_t j = i + 1; j < all.rows; ++j) d.push_back(std::sqrt(squared_distance(all.row(i), all.row(j))));
  std::sort(d.begin(), d.end());
  const auto n = d.size();
  return n % 2 ? d[n / 2] : 0.5 * (d[n / 2 - 1] + d[n / 2]);
}

}  // namespace

TEST(Mmd, MatchesDirectDoubleSum) {
  std::mt19937_64 rng(55);
  for (int pair = 0; pair < 200; ++pair) {
    const std::size_t d = 1 + rng() % 8;
    const auto x = ctflow::testing::random_matrix(20, d, rng);
    auto y = ctflow::testing::random_matrix(20, d, rng);
    for (auto& v : y.data) v += 0.3 * static_cast<double>(pair % 4);
    const double h = 0.5 + static_cast<double>(rng() % 100) / 50.0;
    EXPECT_NEAR(mmd2(x, y, h), mmd2_oracle(x, y, h), 1e-10);
    EXPECT_NEAR(mmd2(x, y), mmd2_oracle(x, y, median_oracle(x, y)), 1e-10);
  }
}

TEST(Mmd, IdenticalWindowsScoreExactlyZero) {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 50; ++t) {
    const auto x = ctflow::testing::random_matrix(30, 5, rng);
    EXPECT_EQ(mmd2(x, x), 0.0);
    EXPECT_EQ(mmd2(x, x, 0.7), 0.0);
  }
}

TEST(Mmd, PermutationInvariantExactly) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 50; ++t) {
    const auto x = ctflow::testing::random_matrix(25, 4, rng);
    const auto y = ctflow::testing::random_matrix(25, 4, rng);
    std::vector<std::size_t> px(25), py(25);
    std::iota(px.begin(), px.end(), 0);
    std::iota(py.begin(), py.end(), 0);
    std::shuffle(px.begin(), px.end(), rng);
    std::shuffle(py.begin(), py.end(), rng);
    EXPECT_EQ(mmd2(x, y), mmd2(take_rows(x, px), take_rows(y, py)));
    EXPECT_EQ(mmd2(x, y, 1.3), mmd2(take_rows(x, px), take_rows(y, py), 1.3));
  }
}

TEST(Mmd, GrowsWithShiftAndRejectsBadInput) {
  std::mt19937_64 rng(3);
  const auto x = ctflow::testing::random_matrix(100, 2, rng);
  double previous = -1;
  for (double shift : {0.0, 0.5, 1.0, 2.0}) {
    auto y = ctflow::testing::random_matrix(100, 2, rng);
    for (std::size_t i = 0; i < y.rows; ++i) y(i, 0) += shift;
    const double v = mmd2(x, y, 1.0);
    EXPECT_GT(v, previous);
    previous = v;
  }
  EXPECT_THROW(mmd2(Matrix(1, 2), Matrix(5, 2)), Error);
  EXPECT_THROW(mmd2(Matrix(3, 2), Matrix(3, 3)), Error);
  EXPECT_THROW(mmd2(x, x, 0.0), Error);
}

TEST(Pca, MatchesEigenDecomposition) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 60, d = 2 + rng() % 6;
    auto x = ctflow::testing::random_matrix(n, d, rng);
    // distinct spread per axis keeps the eigenvalues separated
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) x(i, j) *= 1.0 + 1.5 * static_cast<double>(j);
    const std::size_t dims = 1 + rng() % d;
    const auto pca = pca_fit_project(x, dims);

    Eigen::MatrixXd m(n, d);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = x(i, j);
    const Eigen::MatrixXd centered = m.rowwise() - m.colwise().mean();
    const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(n - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
    for (std::size_t k = 0; k < dims; ++k) {
      const auto col = static_cast<Eigen::Index>(d - 1 - k);  // ascending order in Eigen
      EXPECT_NEAR(pca.eigenvalues[k], solver.eigenvalues()(col), 1e-6 * solver.eigenvalues()(d - 1));
      double dot = 0;
      for (std::size_t j = 0; j < d; ++j) dot += pca.components(k, j) * solver.eigenvectors()(static_cast<Eigen::Index>(j), col);
      EXPECT_NEAR(std::abs(dot), 1.0, 1e-6);
    }
    // projections agree up to the per-component sign
    for (std::size_t k = 0; k < dims; ++k) {
      const auto col = static_cast<Eigen::Index>(d - 1 - k);
      const Eigen::VectorXd proj = centered * solver.eigenvectors().col(col);
      const double sign = proj(0) * pca.projected(0, k) >= 0 ? 1.0 : -1.0;
      for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(pca.projected(i, k), sign * proj(static_cast<Eigen::Index>(i)), 1e-5);
    }
  }
}

TEST(Pca, RankDeficientInputIsRejected) {
  Matrix x(10, 3, 0.0);
  for (std::size_t i = 0; i < 10; ++i) x(i, 0) = static_cast<double>(i);
  EXPECT_NO_THROW(pca_fit_project(x, 1));
  EXPECT_THROW(pca_fit_project(x, 2), Error);
  EXPECT_THROW(pca_fit_project(x, 4), Error);
}

TEST(Decision, ThresholdAndHistoryQuantile) {
  DecisionState s;
  EXPECT_TRUE(decide(s, 0.2, ThresholdDecision{0.1}));
  EXPECT_FALSE(decide(s, 0.1, ThresholdDecision{0.1}));

  // history 1..15, p = 0.05: index ceil(0.95 * 14) = 14 -> the maximum
  std::deque<double> h;
  for (int i = 1; i <= 15; ++i) h.push_back(i);
  EXPECT_EQ(history_quantile(h, 0.05), 15.0);
  EXPECT_EQ(history_quantile(h, 0.5), 8.0);
  EXPECT_EQ(history_quantile(h, 1.0), 1.0);
}

TEST(Decision, AutoDriftNeverFiresBeforeHistoryIsFull) {
  DecisionState s;
  const PercentileDecision p{15, 0.05};
  for (int i = 0; i < 15; ++i) EXPECT_FALSE(decide(s, 1000.0 * i, p));
  EXPECT_EQ(s.history.size(), 15u);
  EXPECT_FALSE(decide(s, 1.0, p));
  EXPECT_TRUE(decide(s, 1e9, p));
  EXPECT_EQ(s.history.size(), 15u);
}

TEST(DriftDetector, ReferenceWindowAndEvaluationCadence) {
  DriftConfig cfg;
  cfg.window_size = 10;
  cfg.detection_interval = 5;
  DriftDetector det(cfg);
  std::vector<int> due;
  for (int i = 0; i < 40; ++i) {
    const std::vector<double> row{static_cast<double>(i % 3), 1.0};
    if (det.observe(row, i)) {
      due.push_back(i);
      EXPECT_TRUE(det.score(nullptr).has_value());
    }
  }
  // first window completes at sample 9; then every 5 samples
  EXPECT_EQ(due, (std::vector<int>{14, 19, 24, 29, 34, 39}));
}

TEST(DriftDetector, TimeWindowsDropOldSamples) {
  DriftConfig cfg;
  cfg.window_kind = WindowKind::seconds;
  cfg.window_size = 100;
  cfg.detection_interval = 1;
  DriftDetector det(cfg);
  for (int t = 0; t < 300; t += 10) det.observe(std::vector<double>{static_cast<double>(t)}, t);
  EXPECT_EQ(det.current_size(), 10u);
}

TEST(DriftDetector, ScoresShiftAboveStationary) {
  std::mt19937_64 rng(4);
  DriftConfig cfg;
  cfg.window_size = 100;
  cfg.detection_interval = 100;
  cfg.use_pca = true;
  cfg.pca_dims = 2;
  DriftDetector det(cfg);
  std::normal_distribution<double> n(0, 1);
  std::vector<double> scores;
  for (int i = 0; i < 600; ++i) {
    const double shift = i >= 400 ? 3.0 : 0.0;
    const std::vector<double> row{n(rng) + shift, n(rng), n(rng)};
    if (det.observe(row, i)) scores.push_back(*det.score(nullptr));
  }
  ASSERT_EQ(scores.size(), 5u);
  EXPECT_GT(scores[3], 5 * std::max({scores[0], scores[1], scores[2]}));
}

TEST(Embedding, ModelLogitsOrRawFeatures) {
  std::mt19937_64 rng(1);
  const auto x = ctflow::testing::random_matrix(4, 3, rng);
  EXPECT_EQ(embed(nullptr, x), x);
  LogisticRegression m(3, 2);
  m.parameters()(0, 0) = 1.0;
  const auto z = embed(&m, x);
  ASSERT_EQ(z.cols, 2u);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(z(i, 0), x(i, 0));
}
