#include "ffts/data.hpp"

#include "bytes.hpp"
#include "ffts/rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace ffts::data {

using nlohmann::json;

void TimeSeries::validate() const {
  require(length() >= 1 && channels() >= 1, "time series must have L >= 1 and C >= 1");
  require(resolution_seconds > 0, "time series resolution_seconds must be positive");
  require(values.allFinite(), "time series contains non-finite values");
}

void PatchConfig::validate() const {
  require(stride >= 1 && stride <= patch_length,
          "patch config requires 1 <= stride <= patch_length (stride=" + std::to_string(stride) +
              ", patch_length=" + std::to_string(patch_length) + ")");
}

int PatchConfig::num_patches(int series_length) const {
  validate();
  require(series_length >= patch_length, "series length " + std::to_string(series_length) +
                                             " is shorter than patch_length " +
                                             std::to_string(patch_length));
  return (series_length - patch_length) / stride + 2;
}

void MaskSpec::validate() const {
  require(mean_masked_length >= 1, "mask mean_masked_length must be >= 1");
  require(mask_ratio > 0.0 && mask_ratio < 1.0, "mask mask_ratio must lie in (0, 1)");
}

double MaskSpec::mean_visible_length() const {
  return mean_masked_length * (1.0 - mask_ratio) / mask_ratio;
}

Eigen::Index MaskMatrix::masked_count() const {
  return static_cast<Eigen::Index>((mask.array() == 0.0).count());
}

void SyntheticClientSpec::validate() const {
  require(length >= 1, "synthetic client length must be >= 1");
  require(channels >= 1, "synthetic client channels must be >= 1");
  require(resolution_seconds > 0, "synthetic client resolution_seconds must be positive");
  require(noise_std >= 0.0, "synthetic client noise_std must be nonnegative");
  require(train_fraction > 0.0 && train_fraction <= 1.0,
          "synthetic client train_fraction must lie in (0, 1]");
  for (const auto& s : seasonal) {
    require(s.period_steps >= 2, "synthetic client seasonal periods must be >= 2");
  }
}

std::pair<TimeSeries, RevinStats> revin_normalize(const TimeSeries& series, double epsilon) {
  require(epsilon >= 0.0, "revin epsilon must be nonnegative");
  const auto L = series.length();
  RevinStats stats;
  stats.epsilon = epsilon;
  stats.mean = series.values.colwise().mean().transpose();
  stats.std.resize(series.channels());
  TimeSeries out = series;
  for (Eigen::Index c = 0; c < series.channels(); ++c) {
    const double var =
        (series.values.col(c).array() - stats.mean(c)).square().sum() / static_cast<double>(L);
    stats.std(c) = std::sqrt(var);
    const double denom = stats.std(c) + epsilon;
    if (denom > 0.0) {
      out.values.col(c) = (series.values.col(c).array() - stats.mean(c)) / denom;
    } else {
      out.values.col(c).setZero();
    }
  }
  return {std::move(out), std::move(stats)};
}

Matrix revin_denormalize(const Matrix& normalized, const RevinStats& stats) {
  require(normalized.cols() == stats.mean.size() && normalized.cols() == stats.std.size(),
          "revin_denormalize: channel count " + std::to_string(normalized.cols()) +
              " does not match stats of size " + std::to_string(stats.mean.size()));
  Matrix out(normalized.rows(), normalized.cols());
  for (Eigen::Index c = 0; c < normalized.cols(); ++c) {
    out.col(c) = normalized.col(c).array() * (stats.std(c) + stats.epsilon) + stats.mean(c);
  }
  return out;
}

TimeSeries revin_denormalize(const TimeSeries& normalized, const RevinStats& stats) {
  TimeSeries out = normalized;
  out.values = revin_denormalize(normalized.values, stats);
  return out;
}

Matrix make_patches(const Vector& channel, const PatchConfig& cfg) {
  const int T = static_cast<int>(channel.size());
  const int P = cfg.num_patches(T);
  const int L = cfg.patch_length;
  const int S = cfg.stride;
  Matrix patches(P, L);
  const double tail = channel(T - 1);
  for (int p = 0; p < P; ++p) {
    for (int j = 0; j < L; ++j) {
      const int t = p * S + j;
      patches(p, j) = t < T ? channel(t) : tail;
    }
  }
  return patches;
}

Vector patch_coverage(int series_length, const PatchConfig& cfg) {
  const int P = cfg.num_patches(series_length);
  Vector count = Vector::Zero(series_length);
  for (int p = 0; p < P; ++p) {
    for (int j = 0; j < cfg.patch_length; ++j) {
      const int t = p * cfg.stride + j;
      if (t < series_length) count(t) += 1.0;
    }
  }
  return count;
}

Vector fold_patches(const Matrix& patches, int series_length, const PatchConfig& cfg) {
  const int P = cfg.num_patches(series_length);
  require(patches.rows() == P && patches.cols() == cfg.patch_length,
          "fold_patches: expected " + std::to_string(P) + "x" + std::to_string(cfg.patch_length) +
              " patches");
  Vector sum = Vector::Zero(series_length);
  const Vector count = patch_coverage(series_length, cfg);
  for (int p = 0; p < P; ++p) {
    for (int j = 0; j < cfg.patch_length; ++j) {
      const int t = p * cfg.stride + j;
      if (t < series_length) sum(t) += patches(p, j);
    }
  }
  return sum.array() / count.array();
}

MaskMatrix sample_mask(int length, int channels, const MaskSpec& spec, std::uint64_t rng_seed) {
  spec.validate();
  require(length >= 1 && channels >= 1, "sample_mask: length and channels must be >= 1");
  // Leaving the masked state ends a segment of mean L_m; leaving the visible
  // state ends a segment of mean L_m (1 - r) / r. The stationary masked
  // fraction is then exactly r.
  const double p_leave_masked = 1.0 / spec.mean_masked_length;
  const double p_leave_visible = p_leave_masked * spec.mask_ratio / (1.0 - spec.mask_ratio);

  MaskMatrix out;
  out.mask.resize(length, channels);
  Rng rng(rng_seed);
  const int independent = spec.shared_across_channels ? 1 : channels;
  for (int c = 0; c < independent; ++c) {
    bool masked = rng.uniform() < spec.mask_ratio;
    for (int t = 0; t < length; ++t) {
      out.mask(t, c) = masked ? 0.0 : 1.0;
      const double u = rng.uniform();
      if (masked ? u < p_leave_masked : u < p_leave_visible) masked = !masked;
    }
  }
  for (int c = independent; c < channels; ++c) out.mask.col(c) = out.mask.col(0);
  return out;
}

TimeSeries apply_mask(const TimeSeries& series, const MaskMatrix& mask) {
  require(series.values.rows() == mask.mask.rows() && series.values.cols() == mask.mask.cols(),
          "apply_mask: mask shape does not match series shape");
  TimeSeries out = series;
  out.values = series.values.cwiseProduct(mask.mask);
  return out;
}

TimeSeries gen_synthetic_series(const SyntheticClientSpec& spec) {
  spec.validate();
  Rng phase_rng(derive_seed(spec.seed, "synthetic.phase"));
  Rng noise_rng(derive_seed(spec.seed, "synthetic.noise"));

  std::vector<std::vector<double>> phases(spec.channels);
  for (auto& per_channel : phases) {
    for (std::size_t j = 0; j < spec.seasonal.size(); ++j) {
      per_channel.push_back(phase_rng.uniform(0.0, 2.0 * std::numbers::pi));
    }
  }

  TimeSeries out;
  out.resolution_seconds = spec.resolution_seconds;
  out.domain_tag = spec.domain_tag;
  out.values.resize(spec.length, spec.channels);
  for (int t = 0; t < spec.length; ++t) {
    for (int c = 0; c < spec.channels; ++c) {
      double v = spec.trend_slope * t;
      for (std::size_t j = 0; j < spec.seasonal.size(); ++j) {
        const auto& s = spec.seasonal[j];
        v += s.amplitude *
             std::sin(2.0 * std::numbers::pi * t / s.period_steps + phases[c][j]);
      }
      if (spec.noise_std > 0.0) v += spec.noise_std * noise_rng.normal();
      out.values(t, c) = v;
    }
  }
  return out;
}

namespace {

ClientSplit split_at(const TimeSeries& full, int train_length) {
  ClientSplit split;
  split.train = full;
  split.validation = full;
  split.train.values = full.values.topRows(train_length);
  split.validation.values = full.values.bottomRows(full.length() - train_length);
  return split;
}

}  // namespace

ClientSplit gen_synthetic_client(const SyntheticClientSpec& spec) {
  const TimeSeries full = gen_synthetic_series(spec);
  const int train_length =
      std::clamp(static_cast<int>(std::lround(spec.train_fraction * spec.length)), 1, spec.length);
  return split_at(full, train_length);
}

std::vector<bool> inject_spikes(TimeSeries& series, int count, int width, double amplitude_sigma,
                                std::uint64_t seed) {
  require(count >= 0 && width >= 1, "inject_spikes: count must be >= 0 and width >= 1");
  const auto L = series.length();
  require(static_cast<Eigen::Index>(count) * width <= L,
          "inject_spikes: " + std::to_string(count) + " spikes of width " + std::to_string(width) +
              " do not fit in " + std::to_string(L) + " steps");
  std::vector<bool> labels(static_cast<std::size_t>(L), false);
  if (count == 0) return labels;
  Vector sd(series.channels());
  for (Eigen::Index c = 0; c < series.channels(); ++c) {
    const double mean = series.values.col(c).mean();
    sd(c) = std::sqrt((series.values.col(c).array() - mean).square().mean());
  }
  Rng rng(derive_seed(seed, "spikes"));
  const auto segment = L / count;
  for (int k = 0; k < count; ++k) {
    const auto room = static_cast<std::uint64_t>(segment - width + 1);
    const Eigen::Index start = k * segment + static_cast<Eigen::Index>(rng.below(room));
    const double sign = rng.bernoulli(0.5) ? 1.0 : -1.0;
    for (Eigen::Index t = start; t < start + width; ++t) {
      series.values.row(t) += sign * amplitude_sigma * sd.transpose();
      labels[static_cast<std::size_t>(t)] = true;
    }
  }
  return labels;
}

std::vector<TimeSeries> make_windows(const TimeSeries& series, int window, int stride) {
  require(window >= 1 && stride >= 1, "make_windows: window and stride must be >= 1");
  std::vector<TimeSeries> out;
  const auto L = static_cast<int>(series.length());
  if (L < window) return out;
  auto emit = [&](int start) {
    TimeSeries w;
    w.resolution_seconds = series.resolution_seconds;
    w.domain_tag = series.domain_tag;
    w.values = series.values.middleRows(start, window);
    out.push_back(std::move(w));
  };
  int start = 0;
  for (; start + window <= L; start += stride) emit(start);
  const int last = L - window;
  if ((start - stride) != last) emit(last);
  return out;
}

void save_series(const std::filesystem::path& path, const TimeSeries& series, std::uint64_t seed,
                 int train_length) {
  series.validate();
  json header = {{"length", series.length()},
                 {"channels", series.channels()},
                 {"resolution_seconds", series.resolution_seconds},
                 {"domain_tag", series.domain_tag},
                 {"seed", seed},
                 {"train_length", train_length}};
  std::string bytes = header.dump();
  bytes.push_back('\n');
  for (Eigen::Index t = 0; t < series.length(); ++t) {
    for (Eigen::Index c = 0; c < series.channels(); ++c) detail::put_f32(bytes, series.values(t, c));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw RuntimeError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::pair<TimeSeries, SeriesFileHeader> load_series(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open dataset file " + path.string());
  std::string header_line;
  std::getline(in, header_line);
  json header;
  try {
    header = json::parse(header_line);
  } catch (const json::exception& e) {
    throw RuntimeError("dataset file " + path.string() + ": bad header: " + e.what());
  }
  SeriesFileHeader h;
  h.length = header.at("length").get<int>();
  h.channels = header.at("channels").get<int>();
  h.resolution_seconds = header.at("resolution_seconds").get<std::int64_t>();
  h.domain_tag = header.value("domain_tag", std::string{});
  h.seed = header.value("seed", std::uint64_t{0});
  h.train_length = header.value("train_length", h.length);

  std::string payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::size_t expected = static_cast<std::size_t>(h.length) * h.channels * 4;
  if (payload.size() != expected) {
    throw RuntimeError("dataset file " + path.string() + ": expected " + std::to_string(expected) +
                       " payload bytes, found " + std::to_string(payload.size()));
  }
  TimeSeries s;
  s.resolution_seconds = h.resolution_seconds;
  s.domain_tag = h.domain_tag;
  s.values.resize(h.length, h.channels);
  std::size_t off = 0;
  for (int t = 0; t < h.length; ++t) {
    for (int c = 0; c < h.channels; ++c, off += 4) s.values(t, c) = detail::get_f32(payload, off);
  }
  s.validate();
  return {std::move(s), h};
}

ClientSplit load_client(const std::filesystem::path& path) {
  auto [series, header] = load_series(path);
  require(header.train_length >= 1 && header.train_length <= header.length,
          "dataset file " + path.string() + ": train_length out of range");
  return split_at(series, header.train_length);
}

TimeSeries load_csv(const std::filesystem::path& path, std::int64_t resolution_seconds,
                    std::string domain_tag) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open CSV file " + path.string());
  std::string line;
  std::getline(in, line);  // header
  std::vector<std::vector<double>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');  // timestamp
    std::vector<double> row;
    while (std::getline(ss, cell, ',')) {
      try {
        row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw UsageError(path.string() + ":" + std::to_string(line_no) + ": bad number '" + cell +
                         "'");
      }
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw UsageError(path.string() + ":" + std::to_string(line_no) + ": ragged row");
    }
    rows.push_back(std::move(row));
  }
  require(!rows.empty() && !rows.front().empty(), "CSV file " + path.string() + " has no data");
  TimeSeries s;
  s.resolution_seconds = resolution_seconds;
  s.domain_tag = std::move(domain_tag);
  s.values.resize(static_cast<Eigen::Index>(rows.size()),
                  static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t t = 0; t < rows.size(); ++t) {
    for (std::size_t c = 0; c < rows[t].size(); ++c) s.values(t, c) = rows[t][c];
  }
  s.validate();
  return s;
}

Scaler Scaler::fit(const TimeSeries& series) {
  auto [_, stats] = revin_normalize(series, 0.0);
  Scaler s;
  s.mean = stats.mean;
  s.std = stats.std;
  for (Eigen::Index c = 0; c < s.std.size(); ++c) {
    if (s.std(c) <= 0.0) s.std(c) = 1.0;
  }
  return s;
}

Scaler Scaler::identity(Eigen::Index channels) {
  return {Vector::Zero(channels), Vector::Ones(channels)};
}

Matrix Scaler::transform(const Matrix& values) const {
  require(values.cols() == mean.size(), "Scaler: channel count mismatch");
  Matrix out(values.rows(), values.cols());
  for (Eigen::Index c = 0; c < values.cols(); ++c) {
    out.col(c) = (values.col(c).array() - mean(c)) / std(c);
  }
  return out;
}

}  // namespace ffts::data
