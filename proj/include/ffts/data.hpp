#pragma once

#include "ffts/common.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace ffts::data {

/// A length-L, C-channel observation. Rows are time steps, columns channels.
struct TimeSeries {
  Matrix values;
  std::int64_t resolution_seconds = 1;
  std::string domain_tag;

  Eigen::Index length() const { return values.rows(); }
  Eigen::Index channels() const { return values.cols(); }
  /// Throws UsageError unless L >= 1, C >= 1, resolution > 0 and all values finite.
  void validate() const;
};

struct RevinStats {
  Vector mean;
  Vector std;
  double epsilon = 1e-5;
};

struct PatchConfig {
  int patch_length = 16;
  int stride = 8;

  void validate() const;
  /// floor((T - L_p) / S) + 2
  int num_patches(int series_length) const;
};

struct MaskSpec {
  int mean_masked_length = 16;
  double mask_ratio = 0.35;
  /// One mask column copied to every channel instead of independent channels.
  bool shared_across_channels = false;

  void validate() const;
  /// Mean length of the visible runs between masked segments.
  double mean_visible_length() const;
};

/// 0 = masked, 1 = visible. Stored as doubles so it multiplies directly.
struct MaskMatrix {
  Matrix mask;

  Eigen::Index masked_count() const;
  bool is_masked(Eigen::Index t, Eigen::Index c) const { return mask(t, c) == 0.0; }
};

struct SeasonalComponent {
  double amplitude = 0.0;
  int period_steps = 2;
};

struct SyntheticClientSpec {
  std::int64_t resolution_seconds = 3600;
  double trend_slope = 0.0;
  std::vector<SeasonalComponent> seasonal;
  double noise_std = 0.0;
  int length = 1024;
  int channels = 1;
  std::uint64_t seed = 0;
  std::string domain_tag = "synthetic";
  /// Leading fraction of the series used for training; the rest is held out.
  double train_fraction = 0.8;

  void validate() const;
};

struct ClientSplit {
  TimeSeries train;
  TimeSeries validation;
};

/// Per-channel standardization to zero mean / unit population std.
std::pair<TimeSeries, RevinStats> revin_normalize(const TimeSeries& series, double epsilon = 1e-5);
TimeSeries revin_denormalize(const TimeSeries& normalized, const RevinStats& stats);
/// Same as revin_denormalize for a bare matrix (e.g. a forecast horizon).
Matrix revin_denormalize(const Matrix& normalized, const RevinStats& stats);

/// Splits one channel into P overlapping patches of length L_p. The channel is
/// extended by repeating its final value S times before slicing.
Matrix make_patches(const Vector& channel, const PatchConfig& cfg);

/// Adjoint-style inverse of make_patches: every position t < T receives the
/// mean of all patch entries that cover it. Padded positions are dropped.
Vector fold_patches(const Matrix& patches, int series_length, const PatchConfig& cfg);
/// Number of patch entries covering each position t < T.
Vector patch_coverage(int series_length, const PatchConfig& cfg);

/// Geometric-segment mask: per channel an alternating masked/visible Markov
/// chain with mean masked run L_m and stationary masked fraction r_m.
MaskMatrix sample_mask(int length, int channels, const MaskSpec& spec, std::uint64_t rng_seed);

TimeSeries apply_mask(const TimeSeries& series, const MaskMatrix& mask);

TimeSeries gen_synthetic_series(const SyntheticClientSpec& spec);
ClientSplit gen_synthetic_client(const SyntheticClientSpec& spec);

/// Adds `count` non-overlapping spikes of `width` steps, each of magnitude
/// amplitude_sigma * (channel std) with a random sign, to every channel.
/// Spike k starts uniformly inside the k-th of `count` equal segments.
/// Returns the per-step anomaly labels.
std::vector<bool> inject_spikes(TimeSeries& series, int count, int width, double amplitude_sigma,
                                std::uint64_t seed);

/// Sliding windows of `window` steps every `stride` steps. The final window is
/// aligned to the series end when the stride does not divide evenly.
std::vector<TimeSeries> make_windows(const TimeSeries& series, int window, int stride);

/// Dataset file: one JSON header line followed by row-major little-endian
/// float32 values.
struct SeriesFileHeader {
  int length = 0;
  int channels = 0;
  std::int64_t resolution_seconds = 1;
  std::string domain_tag;
  std::uint64_t seed = 0;
  int train_length = 0;
};

void save_series(const std::filesystem::path& path, const TimeSeries& series, std::uint64_t seed,
                 int train_length);
std::pair<TimeSeries, SeriesFileHeader> load_series(const std::filesystem::path& path);
/// Loads a dataset file and splits it at the stored train_length.
ClientSplit load_client(const std::filesystem::path& path);

/// Optional CSV ingestion: header row, first column a timestamp (ignored),
/// remaining columns channels.
TimeSeries load_csv(const std::filesystem::path& path, std::int64_t resolution_seconds,
                    std::string domain_tag);

/// Per-channel affine standardization fitted on a reference split.
struct Scaler {
  Vector mean;
  Vector std;

  static Scaler fit(const TimeSeries& series);
  static Scaler identity(Eigen::Index channels);
  Matrix transform(const Matrix& values) const;
};

}  // namespace ffts::data
