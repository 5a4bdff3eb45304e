#pragma once

#include "ffts/data.hpp"
#include "ffts/downstream.hpp"
#include "ffts/fedcore.hpp"
#include "ffts/model.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ffts::harness {

/// A pretraining client: either generated from a synthetic spec or read from
/// a dataset file written by gen-data.
struct ClientSource {
  std::optional<data::SyntheticClientSpec> synthetic;
  std::optional<std::filesystem::path> path;

  data::ClientSplit load() const;
};

struct AnomalyInjection {
  int count = 10;
  int width = 4;
  double amplitude_sigma = 8.0;
};

/// Held-out client and fine-tuning budget used by finetune / evaluate.
struct DownstreamConfig {
  data::SyntheticClientSpec client;
  downstream::FinetuneOptions finetune;
  AnomalyInjection anomalies;
  int eval_stride = 8;
};

struct ExperimentConfig {
  model::ModelConfig model;
  fed::FedConfig fed;
  std::vector<ClientSource> clients;
  std::vector<downstream::TaskSpec> task_specs;
  DownstreamConfig downstream;
  std::filesystem::path output_dir = "ffts_out";
  std::uint64_t master_seed = 0;

  /// Checks every nested invariant; messages name the offending field.
  void validate() const;
  std::vector<data::ClientSplit> load_clients() const;
};

/// Materializes every default. Unknown fields and type errors are rejected
/// with the dotted field path.
ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentConfig& cfg);
nlohmann::json to_json(const model::ModelConfig& cfg);
model::ModelConfig model_config_from_json(const nlohmann::json& j);

/// Parse errors carry the source name plus line and column.
ExperimentConfig parse_config(std::string_view text, const std::string& source = "<config>");
ExperimentConfig load_config(const std::filesystem::path& path);

/// 16 hex digits of FNV-1a over the canonical JSON form, output_dir excluded.
std::string config_hash(const ExperimentConfig& cfg);

}  // namespace ffts::harness
