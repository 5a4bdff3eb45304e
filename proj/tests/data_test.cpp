#include "ffts/data.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "ffts/rng.hpp"

using namespace ffts;
using namespace ffts::data;

namespace {

TimeSeries column(std::initializer_list<double> v) {
  TimeSeries s;
  s.values.resize(static_cast<Eigen::Index>(v.size()), 1);
  Eigen::Index i = 0;
  for (double x : v) s.values(i++, 0) = x;
  return s;
}

TimeSeries random_series(int L, int C, std::uint64_t seed) {
  Rng rng(seed);
  TimeSeries s;
  s.values.resize(L, C);
  for (int t = 0; t < L; ++t)
    for (int c = 0; c < C; ++c) s.values(t, c) = 3.0 * rng.normal() + 10.0 * c;
  return s;
}

struct RunStats {
  double masked_fraction;
  double mean_masked_run;
};

// Independent oracle: straight counting over the mask columns.
RunStats run_stats(const MaskMatrix& m) {
  long masked = 0, runs = 0, total = 0;
  for (Eigen::Index c = 0; c < m.mask.cols(); ++c) {
    bool in_run = false;
    for (Eigen::Index t = 0; t < m.mask.rows(); ++t, ++total) {
      const bool is_masked = m.mask(t, c) == 0.0;
      if (is_masked) {
        ++masked;
        if (!in_run) ++runs;
      }
      in_run = is_masked;
    }
  }
  return {static_cast<double>(masked) / total, runs ? static_cast<double>(masked) / runs : 0.0};
}

}  // namespace

TEST(RevinTest, NormalizesSimpleChannel) {
  auto [out, stats] = revin_normalize(column({1, 2, 3}), 0.0);
  const double sd = std::sqrt(2.0 / 3.0);
  EXPECT_NEAR(out.values(0, 0), (1 - 2) / sd, 1e-12);
  EXPECT_NEAR(out.values(1, 0), 0.0, 1e-12);
  EXPECT_NEAR(out.values(2, 0), (3 - 2) / sd, 1e-12);
  EXPECT_NEAR(out.values(2, 0), 1.2247, 1e-4);
  EXPECT_DOUBLE_EQ(stats.mean(0), 2.0);
  EXPECT_NEAR(stats.std(0), sd, 1e-15);
}

TEST(RevinTest, ConstantChannelMapsToZero) {
  auto [out, stats] = revin_normalize(column({5, 5, 5}), 1e-5);
  EXPECT_TRUE(out.values.isZero(0.0));
  EXPECT_EQ(stats.std(0), 0.0);
}

TEST(RevinTest, RoundTripRandom) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto s = random_series(64, 3, seed);
    auto [n, stats] = revin_normalize(s);
    for (Eigen::Index c = 0; c < 3; ++c) {
      EXPECT_NEAR(n.values.col(c).mean(), 0.0, 1e-12);
      const double sd = std::sqrt(n.values.col(c).array().square().mean());
      EXPECT_NEAR(sd, stats.std(c) / (stats.std(c) + stats.epsilon), 1e-12);
    }
    EXPECT_LT((revin_denormalize(n, stats).values - s.values).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(RevinTest, Denormalize) {
  RevinStats st{Vector::Constant(1, 3.0), Vector::Constant(1, 2.0), 0.0};
  EXPECT_TRUE(revin_denormalize(column({0, 0}), st).values.isApproxToConstant(3.0));

  const double sd = std::sqrt(2.0 / 3.0);
  RevinStats st2{Vector::Constant(1, 2.0), Vector::Constant(1, sd), 0.0};
  const auto back = revin_denormalize(column({-1.0 / sd, 0.0, 1.0 / sd}), st2);
  EXPECT_NEAR(back.values(0, 0), 1.0, 1e-12);
  EXPECT_NEAR(back.values(2, 0), 3.0, 1e-12);

  RevinStats ident{Vector::Zero(1), Vector::Ones(1), 0.0};
  const auto x = column({0.5, -7.0});
  EXPECT_EQ(revin_denormalize(x, ident).values, x.values);

  RevinStats wrong{Vector::Zero(2), Vector::Ones(2), 0.0};
  EXPECT_THROW(revin_denormalize(x, wrong), UsageError);
}

TEST(PatchTest, CountsMatchFormula) {
  EXPECT_EQ((PatchConfig{16, 8}.num_patches(512)), 64);
  EXPECT_EQ((PatchConfig{16, 8}.num_patches(96)), 12);
  EXPECT_EQ((PatchConfig{16, 8}.num_patches(16)), 2);
  EXPECT_THROW((PatchConfig{16, 8}.num_patches(15)), UsageError);
  EXPECT_THROW((PatchConfig{8, 16}.validate()), UsageError);
}

TEST(PatchTest, MinimalLengthPadsWithLastValue) {
  Vector x(16);
  std::iota(x.data(), x.data() + 16, 0.0);
  const Matrix p = make_patches(x, {16, 8});
  ASSERT_EQ(p.rows(), 2);
  ASSERT_EQ(p.cols(), 16);
  for (int j = 0; j < 16; ++j) EXPECT_EQ(p(0, j), j);
  for (int j = 0; j < 8; ++j) EXPECT_EQ(p(1, j), 8 + j);
  for (int j = 8; j < 16; ++j) EXPECT_EQ(p(1, j), 15.0);
}

TEST(PatchTest, FoldInvertsPatching) {
  Rng rng(3);
  for (int T : {16, 37, 96}) {
    Vector x(T);
    for (int t = 0; t < T; ++t) x(t) = rng.normal();
    const PatchConfig cfg{16, 4};
    EXPECT_LT((fold_patches(make_patches(x, cfg), T, cfg) - x).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_GE(patch_coverage(T, cfg).minCoeff(), 1.0);
  }
}

TEST(MaskTest, VanishingRatioIsAllVisible) {
  const auto m = sample_mask(100, 1, {16, 1e-9}, 42);
  EXPECT_EQ(m.masked_count(), 0);
}

TEST(MaskTest, StationaryFractionAndRunLength) {
  const auto a = run_stats(sample_mask(100000, 10, {16, 0.35}, 7));
  EXPECT_GE(a.masked_fraction, 0.33);
  EXPECT_LE(a.masked_fraction, 0.37);
  const auto b = run_stats(sample_mask(100000, 10, {8, 0.25}, 8));
  EXPECT_GE(b.mean_masked_run, 7.6);
  EXPECT_LE(b.mean_masked_run, 8.4);
}

TEST(MaskTest, DeterministicAndSharedFlag) {
  const MaskSpec spec{8, 0.3};
  EXPECT_EQ(sample_mask(200, 3, spec, 5).mask, sample_mask(200, 3, spec, 5).mask);
  EXPECT_NE(sample_mask(200, 3, spec, 5).mask, sample_mask(200, 3, spec, 6).mask);
  MaskSpec shared = spec;
  shared.shared_across_channels = true;
  const auto m = sample_mask(200, 3, shared, 5);
  EXPECT_EQ(m.mask.col(0), m.mask.col(1));
  EXPECT_EQ(m.mask.col(0), m.mask.col(2));
  EXPECT_THROW(sample_mask(10, 1, {8, 1.0}, 0), UsageError);
  EXPECT_THROW(sample_mask(10, 1, {0, 0.5}, 0), UsageError);
}

TEST(MaskTest, ApplyMask) {
  const auto s = column({1, 2, 3});
  MaskMatrix m{Matrix::Ones(3, 1)};
  EXPECT_EQ(apply_mask(s, m).values, s.values);
  m.mask(1, 0) = 0.0;
  const auto out = apply_mask(s, m);
  EXPECT_EQ(out.values(0, 0), 1.0);
  EXPECT_EQ(out.values(1, 0), 0.0);
  EXPECT_EQ(out.values(2, 0), 3.0);
  EXPECT_TRUE(apply_mask(s, MaskMatrix{Matrix::Zero(3, 1)}).values.isZero(0.0));
  EXPECT_THROW(apply_mask(s, MaskMatrix{Matrix::Ones(2, 1)}), UsageError);
}

TEST(SyntheticTest, ZeroSpecIsZero) {
  SyntheticClientSpec spec;
  spec.length = 50;
  spec.channels = 2;
  spec.seasonal = {{0.0, 10}};
  EXPECT_TRUE(gen_synthetic_series(spec).values.isZero(0.0));
}

TEST(SyntheticTest, Deterministic) {
  SyntheticClientSpec spec;
  spec.length = 300;
  spec.channels = 3;
  spec.trend_slope = 0.01;
  spec.seasonal = {{1.0, 24}, {0.5, 7}};
  spec.noise_std = 0.3;
  spec.seed = 99;
  const auto a = gen_synthetic_client(spec);
  const auto b = gen_synthetic_client(spec);
  EXPECT_EQ(a.train.values, b.train.values);
  EXPECT_EQ(a.validation.values, b.validation.values);
  EXPECT_EQ(a.train.length(), 240);
  EXPECT_EQ(a.validation.length(), 60);
}

TEST(SyntheticTest, SharedTrendAcrossResolutions) {
  // Same trend and seasonal shape at four resolutions; the trend extracted by
  // a one-period moving average, resampled to 200 points, must agree.
  const std::int64_t resolutions[] = {3600, 300, 30, 86400};
  std::vector<Vector> trends;
  for (int i = 0; i < 4; ++i) {
    SyntheticClientSpec spec;
    spec.resolution_seconds = resolutions[i];
    spec.length = 1000;
    spec.trend_slope = 0.004;
    spec.seasonal = {{1.0, 50}};
    spec.noise_std = 0.1 * (i + 1);
    spec.seed = 100 + static_cast<std::uint64_t>(i);
    const Vector x = gen_synthetic_series(spec).values.col(0);
    Vector ma = Vector::Zero(x.size() - 49);
    for (Eigen::Index t = 0; t < ma.size(); ++t) ma(t) = x.segment(t, 50).mean();
    Vector resampled(200);
    for (int k = 0; k < 200; ++k) {
      const double pos = k * (ma.size() - 1) / 199.0;
      const auto lo = static_cast<Eigen::Index>(pos);
      const auto hi = std::min<Eigen::Index>(lo + 1, ma.size() - 1);
      resampled(k) = ma(lo) + (pos - lo) * (ma(hi) - ma(lo));
    }
    trends.push_back(resampled);
  }
  for (int a = 0; a < 4; ++a) {
    for (int b = a + 1; b < 4; ++b) {
      const Vector x = trends[a].array() - trends[a].mean();
      const Vector y = trends[b].array() - trends[b].mean();
      EXPECT_GT(x.dot(y) / (x.norm() * y.norm()), 0.9) << a << "," << b;
    }
  }
}

TEST(WindowTest, SlidingWindowsCoverTail) {
  auto s = random_series(100, 2, 1);
  auto w = make_windows(s, 32, 16);
  ASSERT_EQ(w.size(), 6u);  // starts 0,16,32,48,64 and 68
  EXPECT_EQ(w.back().values, s.values.bottomRows(32));
  EXPECT_TRUE(make_windows(s, 101, 1).empty());
  EXPECT_EQ(make_windows(s, 100, 5).size(), 1u);
}

TEST(DatasetFileTest, RoundTripAndTruncation) {
  const auto dir = std::filesystem::temp_directory_path() / "ffts_data_test";
  std::filesystem::create_directories(dir);
  auto s = random_series(40, 3, 11);
  s.resolution_seconds = 300;
  s.domain_tag = "energy";
  save_series(dir / "c.bin", s, 77, 30);
  auto [loaded, header] = load_series(dir / "c.bin");
  EXPECT_EQ(header.seed, 77u);
  EXPECT_EQ(header.train_length, 30);
  EXPECT_EQ(loaded.domain_tag, "energy");
  EXPECT_EQ(loaded.resolution_seconds, 300);
  EXPECT_EQ(loaded.values, s.values.cast<float>().cast<double>());
  const auto split = load_client(dir / "c.bin");
  EXPECT_EQ(split.train.length(), 30);
  EXPECT_EQ(split.validation.length(), 10);

  const auto size = std::filesystem::file_size(dir / "c.bin");
  std::filesystem::resize_file(dir / "c.bin", size - 4);
  EXPECT_THROW(load_series(dir / "c.bin"), RuntimeError);
  std::filesystem::remove_all(dir);
}

TEST(CsvTest, IgnoresTimestampColumn) {
  const auto path = std::filesystem::temp_directory_path() / "ffts_csv_test.csv";
  {
    std::ofstream out(path);
    out << "date,a,b\n2020-01-01,1,2\n2020-01-02,3,4\n";
  }
  const auto s = load_csv(path, 3600, "etth");
  ASSERT_EQ(s.length(), 2);
  ASSERT_EQ(s.channels(), 2);
  EXPECT_EQ(s.values(1, 0), 3.0);
  std::filesystem::remove(path);
}
