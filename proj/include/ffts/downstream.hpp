#pragma once

#include "ffts/data.hpp"
#include "ffts/model.hpp"
#include "ffts/tensor.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace ffts::downstream {

enum class Task { forecast, impute, detect };

std::string to_string(Task task);
Task task_from_string(const std::string& name);

/// Missing-data ratios used by the imputation protocol.
inline const std::vector<double> kImputeRatios{0.125, 0.25, 0.375, 0.5};

struct TaskSpec {
  Task task = Task::forecast;
  /// Forecast only.
  std::optional<int> horizon;
  /// Impute only.
  std::optional<double> mask_ratio;
  /// Detect only.
  std::optional<double> anomaly_quantile;
  bool freeze_encoder = true;
  int channels = 1;

  static TaskSpec forecast(int horizon, int channels = 1, bool freeze_encoder = true);
  static TaskSpec impute(double mask_ratio, int channels = 1, bool freeze_encoder = true);
  static TaskSpec detect(double anomaly_quantile = 0.99, int channels = 1, bool freeze_encoder = true);

  void validate() const;
  /// horizon (forecast) or seq_len (impute / detect).
  int output_per_channel(const model::ModelConfig& cfg) const;
  int output_dim(const model::ModelConfig& cfg) const { return output_per_channel(cfg) * channels; }
};

nlohmann::json to_json(const TaskSpec& spec);
TaskSpec task_spec_from_json(const nlohmann::json& j);

/// Pretrained encoder plus a task head
///   LayerNorm(P * d_model) -> Linear(2 * d_model) -> GELU -> Linear(out),
/// shared across channels.
struct AdaptedModel {
  model::ModelConfig config;
  TaskSpec spec;
  ParameterSet encoder;
  ParameterSet head;
};

/// Copies every encoder tensor of `pretrained` (the reconstruction head is
/// dropped) and initializes a fresh head from `seed`.
AdaptedModel attach_head(const ParameterSet& pretrained, const model::ModelConfig& cfg,
                         const TaskSpec& spec, std::uint64_t seed);

/// Window of seq_len steps (mask: 1 visible, 0 missing) to the head output in
/// original units: horizon x C for forecasting, seq_len x C otherwise.
Matrix predict(const AdaptedModel& model, const data::TimeSeries& window,
               const data::MaskMatrix* mask = nullptr);

struct TaskLoss {
  double loss = 0.0;
  /// Encoder tensors followed by head tensors; encoder gradients are zero
  /// when the encoder is frozen.
  ParameterSet gradients;
};

/// Fine-tuning objective of one window (seq_len + horizon steps for
/// forecasting, seq_len otherwise) and its exact gradient. `mask_seed` draws
/// the artificial mask of the imputation task.
TaskLoss task_loss(const AdaptedModel& model, const data::TimeSeries& window,
                   std::uint64_t mask_seed = 0);

struct FinetuneOptions {
  int epochs = 10;
  double learning_rate = 1e-3;
  double momentum = 0.9;
  double grad_clip = 1.0;
  int batch_size = 16;
  /// Leading fraction of the training windows used (few-shot when < 1).
  double data_fraction = 1.0;
  /// Window stride; 0 means the horizon (forecast) or seq_len / 4.
  int stride = 0;
  std::uint64_t seed = 0;
};

struct FinetuneResult {
  AdaptedModel model;
  /// Mean loss per epoch, each batch measured before its update.
  std::vector<double> loss_trace;
  std::size_t num_samples = 0;
};

/// Supervised training on windows of `train`: future MSE (forecast), MSE on
/// artificially masked points (impute) or full reconstruction MSE (detect),
/// all on the window-normalized scale.
FinetuneResult finetune(AdaptedModel model, const data::TimeSeries& train,
                        const FinetuneOptions& options);

struct EvalReport {
  std::string task;
  std::map<std::string, double> metrics;
  std::string dataset;
  std::string config_hash;
  std::vector<std::string> flags;

  nlohmann::json to_json() const;
};

/// Look-back window (seq_len x C) to a horizon x C forecast in original units.
using Forecaster = std::function<Matrix(const data::TimeSeries& lookback)>;
/// Window with missing points to a full seq_len x C estimate in original units.
using Imputer = std::function<Matrix(const data::TimeSeries& window, const data::MaskMatrix& mask)>;
/// Window to its reconstruction in original units.
using Reconstructor = std::function<Matrix(const data::TimeSeries& window)>;

Forecaster forecaster(const AdaptedModel& model);
Imputer imputer(const AdaptedModel& model);
Reconstructor reconstructor(const AdaptedModel& model);
/// Zero-shot paths through the pretraining reconstruction head.
Imputer pretrained_imputer(const ParameterSet& params, const model::ModelConfig& cfg);
Reconstructor pretrained_reconstructor(const ParameterSet& params, const model::ModelConfig& cfg);
Imputer linear_interpolation_imputer();
Imputer zero_imputer();

struct ForecastEvalOptions {
  int seq_len = 512;
  int horizon = 96;
  int stride = 1;
  /// Adds SMAPE to the report.
  bool short_term = false;
  /// Defines the normalized scale of the metrics; identity when unset.
  std::optional<data::Scaler> scaler;
};

/// Sliding-window MSE / MAE of horizon-step forecasts.
EvalReport evaluate_forecast(const Forecaster& model, const data::TimeSeries& series,
                             const ForecastEvalOptions& options);
EvalReport evaluate_forecast(const AdaptedModel& model, const data::TimeSeries& series, int stride = 1,
                             std::optional<data::Scaler> scaler = std::nullopt);

struct ImputeEvalOptions {
  int seq_len = 512;
  double mask_ratio = 0.25;
  std::uint64_t seed = 0;
  std::optional<data::Scaler> scaler;
};

/// Exactly round(ratio * L * C) points per window, uniformly at random.
data::MaskMatrix uniform_mask(int length, int channels, double ratio, std::uint64_t seed);

/// MSE / MAE over the masked points of non-overlapping windows.
EvalReport evaluate_impute(const Imputer& model, const data::TimeSeries& series,
                           const ImputeEvalOptions& options);

/// Per-point squared reconstruction error averaged over channels; windows of
/// seq_len tile the series, the last one aligned to its end.
std::vector<double> anomaly_scores(const Reconstructor& model, const data::TimeSeries& series,
                                   int seq_len);

/// Threshold = quantile of the combined train + test scores; a test point is
/// flagged when its score exceeds the threshold.
EvalReport detect_anomalies(const std::vector<double>& train_scores,
                            const std::vector<double>& test_scores, const std::vector<bool>& labels,
                            double quantile, bool point_adjust);
/// Same, with an explicit threshold.
EvalReport detect_with_threshold(const std::vector<double>& test_scores,
                                 const std::vector<bool>& labels, double threshold,
                                 bool point_adjust);

EvalReport evaluate_anomaly(const Reconstructor& model, const data::TimeSeries& train_series,
                            const data::TimeSeries& test_series, const std::vector<bool>& labels,
                            int seq_len, double quantile = 0.99, bool point_adjust = false);

}  // namespace ffts::downstream
