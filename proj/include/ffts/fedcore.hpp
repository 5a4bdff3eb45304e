#pragma once

#include "ffts/data.hpp"
#include "ffts/model.hpp"
#include "ffts/tensor.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace ffts::fed {

enum class Algorithm {
  /// Masked reconstruction plus the ATM alignment term.
  ffts,
  /// Plain masked reconstruction; the alignment term is never evaluated.
  fedavg,
};

struct FedConfig {
  int num_clients = 4;
  double participation_rate = 1.0;
  int local_epochs = 1;
  int rounds = 10;
  double lambda = 0.01;
  data::MaskSpec mask_spec{16, 0.35};
  double learning_rate = 1e-3;
  double momentum = 0.0;
  double grad_clip = 0.0;
  int batch_size = 8;
  std::uint64_t seed = 0;
  Algorithm algorithm = Algorithm::ffts;
  /// new_ATM = (1 - mu) * aggregate + mu * previous global ATM.
  double server_atm_momentum = 0.0;
  /// Pass broadcast and uploaded parameters through the checkpoint codec.
  bool serialize_roundtrip = false;
  /// Training-window stride; 0 means seq_len / 2.
  int window_stride = 0;
  bool evaluate_each_round = true;

  void validate() const;
  bool uses_alignment() const { return algorithm == Algorithm::ffts; }
};

struct ClientState {
  int client_id = 0;
  /// Training windows of model.seq_len steps.
  std::vector<data::TimeSeries> dataset;
  /// Held-out windows used for validation MSE.
  std::vector<data::TimeSeries> validation;
  std::size_t n_samples = 0;
  std::uint64_t rng_seed = 0;
  /// Parameters after this client's most recent local update.
  ParameterSet local_params;
};

/// Windows each split and derives the client's seed from the master seed.
std::vector<ClientState> make_clients(const std::vector<data::ClientSplit>& splits,
                                      const model::ModelConfig& model_cfg, const FedConfig& cfg);

/// max(1, round(rate * N)) distinct indices, ascending, uniform without
/// replacement.
std::vector<int> sample_clients(int num_clients, double participation_rate,
                                std::uint64_t round_seed);

struct LocalResult {
  ParameterSet params;
  std::size_t n_samples = 0;
  double mean_loss = 0.0;
};

struct LocalTrainOptions {
  /// Skips the reconstruction term entirely (used to study the alignment
  /// term in isolation).
  bool include_reconstruction = true;
  /// Called after every optimizer step with the current parameters.
  std::function<void(const ParameterSet&)> on_step;
};

/// Minibatch SGD on the local objective starting from `start`, with the ATM
/// subset of `anchor` as the fixed alignment target.
LocalResult local_train(ParameterSet start, const ParameterSet& anchor, const ClientState& client,
                        const model::ModelConfig& model_cfg, const FedConfig& cfg,
                        int round_index, const LocalTrainOptions& options = {});

/// local_train starting from, and anchored at, the received global parameters.
LocalResult local_update(const ParameterSet& global_params, const ClientState& client,
                         const model::ModelConfig& model_cfg, const FedConfig& cfg,
                         int round_index);

struct ClientUpdate {
  int client_id = 0;
  ParameterSet params;
  std::size_t n_samples = 0;
};

/// Sample-weighted mean of the client parameters, accumulated in ascending
/// client_id order.
ParameterSet aggregate(std::vector<ClientUpdate> updates);

/// Masked-reconstruction MSE (normalized scale) over the validation windows
/// with masks fixed per client.
double validation_mse(const ParameterSet& params, const ClientState& client,
                      const model::ModelConfig& model_cfg, const FedConfig& cfg);

struct RoundReport {
  int round_index = 0;
  std::vector<int> participants;
  std::vector<double> client_losses;
  std::vector<std::size_t> client_samples;
  double weighted_loss = 0.0;
  /// Per client (all clients, by id) when evaluation is enabled.
  std::vector<double> validation_mse;
  double weighted_validation_mse = 0.0;
  double wall_time_seconds = 0.0;
  std::string timestamp;
};

struct RoundResult {
  ParameterSet params;
  RoundReport report;
};

RoundResult run_round(const ParameterSet& server_params, std::vector<ClientState>& clients,
                      const model::ModelConfig& model_cfg, const FedConfig& cfg, int round_index,
                      int workers = 1);

struct PretrainResult {
  ParameterSet initial_params;
  ParameterSet final_params;
  std::vector<RoundReport> reports;
};

using RoundCallback = std::function<void(const RoundReport&, const ParameterSet&)>;

ParameterSet initial_parameters(const model::ModelConfig& model_cfg, const FedConfig& cfg);

PretrainResult run_pretraining(const model::ModelConfig& model_cfg, const FedConfig& cfg,
                               std::vector<ClientState> clients, int workers = 1,
                               const RoundCallback& on_round = {});
PretrainResult run_pretraining(const model::ModelConfig& model_cfg, const FedConfig& cfg,
                               const std::vector<data::SyntheticClientSpec>& specs,
                               int workers = 1, const RoundCallback& on_round = {});

/// Four clients at 30 s, 5 min, 1 h and 1 day resolution sharing one trend
/// slope, with resolution-specific seasonal periods and noise levels.
std::vector<data::SyntheticClientSpec> heterogeneous_client_specs(int length, int channels,
                                                                  std::uint64_t seed);
/// Index 0-3 are the pretraining domains above; index 4 is a held-out
/// 10-minute domain with its own seasonal periods.
data::SyntheticClientSpec heterogeneous_client_spec(int index, int length, int channels,
                                                    std::uint64_t seed);

}  // namespace ffts::fed
