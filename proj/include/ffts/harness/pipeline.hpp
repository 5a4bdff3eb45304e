#pragma once

#include "ffts/downstream.hpp"
#include "ffts/fedcore.hpp"
#include "ffts/harness/config.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace ffts::harness {

/// Round report as one JSONL record. Wall time and timestamp live under the
/// single "timing" key; everything else is deterministic.
nlohmann::json report_to_json(const fed::RoundReport& report, const std::string& config_hash);

/// Writes data/client_<i>.bin for every pretraining client and
/// data/downstream.bin for the held-out client. Returns the written paths.
std::vector<std::filesystem::path> generate_data(const ExperimentConfig& cfg,
                                                 const std::filesystem::path& out_dir);

struct PretrainRun {
  fed::PretrainResult result;
  std::string config_hash;
  std::filesystem::path initial_checkpoint;
  /// Empty when no round ran.
  std::filesystem::path final_checkpoint;
};

/// Runs federated pretraining and writes reports.jsonl, the initial and final
/// checkpoints and summary.json under `out_dir`.
PretrainRun pretrain(const ExperimentConfig& cfg, int workers, const std::filesystem::path& out_dir,
                     std::ostream* log = nullptr);

/// Held-out client: train/test split, a scaler fitted on train and a copy of
/// the test split with injected spikes plus their labels.
struct DownstreamData {
  data::ClientSplit split;
  data::Scaler scaler;
  data::TimeSeries anomalous_test;
  std::vector<bool> labels;
};

DownstreamData downstream_data(const ExperimentConfig& cfg);

/// Parameters of a pretraining checkpoint, rejected unless its config hash
/// matches `cfg`.
ParameterSet load_pretrained(const ExperimentConfig& cfg, const std::filesystem::path& checkpoint);

std::filesystem::path adapted_checkpoint_path(const std::filesystem::path& out_dir, std::size_t task_index,
                                              const downstream::TaskSpec& spec);

struct FinetuneRun {
  downstream::AdaptedModel model;
  std::vector<double> loss_trace;
  std::filesystem::path checkpoint;
};

/// Fine-tunes a head for every task spec on the held-out client and writes
/// adapted_<i>_<task>.ckpt plus finetune.json.
std::vector<FinetuneRun> finetune_tasks(const ExperimentConfig& cfg, const ParameterSet& pretrained,
                                        const std::filesystem::path& out_dir,
                                        std::ostream* log = nullptr);

void save_adapted(const downstream::AdaptedModel& model, const std::string& config_hash,
                  const std::filesystem::path& path);
downstream::AdaptedModel load_adapted(const std::filesystem::path& path,
                                      const std::optional<std::string>& expected_hash);

/// Evaluates every task spec. A task uses its adapted checkpoint from
/// `out_dir` when present; otherwise imputation and detection run zero-shot
/// through the pretraining head and forecasting through an untrained head.
/// Writes eval_reports.json.
std::vector<downstream::EvalReport> evaluate_tasks(const ExperimentConfig& cfg,
                                                   const ParameterSet& pretrained,
                                                   const std::filesystem::path& out_dir,
                                                   std::ostream* log = nullptr);

enum class AblationAxis { top_k, lambda, participation, experts };

AblationAxis ablation_axis_from_string(const std::string& name);
std::string to_string(AblationAxis axis);

/// Copy of `cfg` with one axis set to `value`. The expert axis keeps the
/// first `value` experts active (top_k clamped to fit).
ExperimentConfig with_axis_value(const ExperimentConfig& cfg, AblationAxis axis, double value);

struct AblationRow {
  std::string axis;
  double value = 0.0;
  double final_weighted_loss = 0.0;
  double final_validation_mse = 0.0;
  int rounds = 0;
};

/// One pretraining run per value; writes ablation_<axis>.csv and .jsonl.
std::vector<AblationRow> ablate(const ExperimentConfig& cfg, AblationAxis axis,
                                const std::vector<double>& values, int workers,
                                const std::filesystem::path& out_dir, std::ostream* log = nullptr);

}  // namespace ffts::harness
