#include "ffts/fedcore.hpp"

#include "ffts/harness/checkpoint.hpp"
#include "ffts/optim.hpp"
#include "ffts/rng.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <ctime>
#include <exception>
#include <iomanip>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

namespace ffts::fed {

void FedConfig::validate() const {
  require(num_clients >= 1, "fed.num_clients must be positive");
  require(participation_rate > 0.0 && participation_rate <= 1.0,
          "fed.participation_rate must lie in (0, 1]");
  require(local_epochs >= 1, "fed.local_epochs must be positive");
  require(rounds >= 0, "fed.rounds must be nonnegative");
  require(lambda >= 0.0, "fed.lambda must be nonnegative");
  mask_spec.validate();
  require(learning_rate >= 0.0, "fed.learning_rate must be nonnegative");
  require(momentum >= 0.0 && momentum < 1.0, "fed.momentum must lie in [0, 1)");
  require(grad_clip >= 0.0, "fed.grad_clip must be nonnegative");
  require(batch_size >= 1, "fed.batch_size must be positive");
  require(server_atm_momentum >= 0.0 && server_atm_momentum < 1.0,
          "fed.server_atm_momentum must lie in [0, 1)");
  require(window_stride >= 0, "fed.window_stride must be nonnegative");
}

std::vector<ClientState> make_clients(const std::vector<data::ClientSplit>& splits,
                                      const model::ModelConfig& model_cfg, const FedConfig& cfg) {
  const int stride = cfg.window_stride > 0 ? cfg.window_stride : std::max(1, model_cfg.seq_len / 2);
  std::vector<ClientState> clients;
  for (std::size_t i = 0; i < splits.size(); ++i) {
    ClientState c;
    c.client_id = static_cast<int>(i);
    c.dataset = data::make_windows(splits[i].train, model_cfg.seq_len, stride);
    c.validation = data::make_windows(splits[i].validation, model_cfg.seq_len, model_cfg.seq_len);
    c.n_samples = c.dataset.size();
    c.rng_seed = derive_seed(cfg.seed, "client", {i});
    require(c.n_samples > 0, "client " + std::to_string(i) + " has no training window of length " +
                                 std::to_string(model_cfg.seq_len));
    clients.push_back(std::move(c));
  }
  return clients;
}

std::vector<int> sample_clients(int num_clients, double participation_rate,
                                std::uint64_t round_seed) {
  require(num_clients >= 1, "sample_clients: num_clients must be positive");
  require(participation_rate > 0.0 && participation_rate <= 1.0,
          "sample_clients: participation_rate must lie in (0, 1]");
  const int m = std::clamp(static_cast<int>(std::lround(participation_rate * num_clients)), 1,
                           num_clients);
  std::vector<int> ids(static_cast<std::size_t>(num_clients));
  std::iota(ids.begin(), ids.end(), 0);
  Rng rng(round_seed);
  for (int i = 0; i < m; ++i) {
    const auto j = i + static_cast<int>(rng.below(static_cast<std::uint64_t>(num_clients - i)));
    std::swap(ids[static_cast<std::size_t>(i)], ids[static_cast<std::size_t>(j)]);
  }
  ids.resize(static_cast<std::size_t>(m));
  std::sort(ids.begin(), ids.end());
  return ids;
}

namespace {

// A fresh mask with at least one masked point; gives up after a few tries.
data::MaskMatrix draw_mask(const data::TimeSeries& x, const data::MaskSpec& spec,
                           std::uint64_t seed) {
  data::MaskMatrix m;
  for (std::uint64_t attempt = 0; attempt < 8; ++attempt) {
    m = data::sample_mask(static_cast<int>(x.length()), static_cast<int>(x.channels()), spec,
                          derive_seed(seed, "attempt", {attempt}));
    if (m.masked_count() > 0) break;
  }
  return m;
}

ParameterSet codec_roundtrip(const ParameterSet& p) {
  return harness::decode_checkpoint(harness::encode_checkpoint(p, {})).first;
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t tt = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

template <typename Fn>
void parallel_for(std::size_t n, int workers, Fn&& fn) {
  const auto threads = static_cast<std::size_t>(std::max(1, workers));
  if (threads == 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < std::min(threads, n); ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace

LocalResult local_train(ParameterSet start, const ParameterSet& anchor, const ClientState& client,
                        const model::ModelConfig& model_cfg, const FedConfig& cfg,
                        int round_index, const LocalTrainOptions& options) {
  require(!client.dataset.empty(), "local_update: client " + std::to_string(client.client_id) +
                                       " has an empty dataset");
  start.require_same_layout(anchor);
  ParameterSet params = std::move(start);
  Sgd opt({cfg.learning_rate, cfg.momentum, cfg.grad_clip});
  const bool align = cfg.uses_alignment();
  const auto n = client.dataset.size();
  const auto round = static_cast<std::uint64_t>(round_index);

  double loss_sum = 0.0;
  std::size_t batches = 0;
  std::vector<std::size_t> order(n);
  for (int epoch = 0; epoch < cfg.local_epochs; ++epoch) {
    const auto ep = static_cast<std::uint64_t>(epoch);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle(derive_seed(client.rng_seed, "order", {round, ep}));
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);

    for (std::size_t begin = 0; begin < n; begin += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(n, begin + static_cast<std::size_t>(cfg.batch_size));
      const double scale = 1.0 / static_cast<double>(end - begin);
      ParameterSet grads = params.zeros_like();
      double batch_loss = 0.0;
      if (options.include_reconstruction) {
        for (std::size_t b = begin; b < end; ++b) {
          const auto idx = order[b];
          const auto& x = client.dataset[idx];
          const auto mask =
              draw_mask(x, cfg.mask_spec, derive_seed(client.rng_seed, "mask", {round, ep, idx}));
          if (mask.masked_count() == 0) continue;
          const auto trace = model::forward(x, mask, params, model_cfg);
          batch_loss += scale * model::masked_mse(trace.reconstruction_normalized,
                                                  trace.normalized, mask);
          model::accumulate_reconstruction_gradient(trace, mask, params, model_cfg, grads, scale);
        }
      }
      if (align) {
        model::add_alignment_gradient(params, anchor, cfg.lambda, grads);
        batch_loss += cfg.lambda * atm_squared_distance(params, anchor);
      }
      opt.step(params, grads);
      if (options.on_step) options.on_step(params);
      loss_sum += batch_loss;
      ++batches;
    }
  }
  return {std::move(params), client.n_samples, batches ? loss_sum / static_cast<double>(batches) : 0.0};
}

LocalResult local_update(const ParameterSet& global_params, const ClientState& client,
                         const model::ModelConfig& model_cfg, const FedConfig& cfg,
                         int round_index) {
  return local_train(global_params, global_params, client, model_cfg, cfg, round_index);
}

ParameterSet aggregate(std::vector<ClientUpdate> updates) {
  require(!updates.empty(), "aggregate: no client updates");
  std::stable_sort(updates.begin(), updates.end(),
                   [](const ClientUpdate& a, const ClientUpdate& b) { return a.client_id < b.client_id; });
  double total = 0.0;
  for (const auto& u : updates) {
    require(u.n_samples > 0, "aggregate: client " + std::to_string(u.client_id) + " has no samples");
    u.params.require_same_layout(updates.front().params);
    total += static_cast<double>(u.n_samples);
  }
  // Weighted deviations from the lowest-id client, so identical inputs
  // aggregate to themselves bit for bit.
  const ParameterSet& ref = updates.front().params;
  ParameterSet delta = ref.zeros_like();
  for (std::size_t k = 1; k < updates.size(); ++k) {
    const double w = static_cast<double>(updates[k].n_samples) / total;
    for (std::size_t i = 0; i < delta.entries().size(); ++i) {
      auto& acc = delta.entries()[i].tensor.data;
      const auto& src = updates[k].params.entries()[i].tensor.data;
      const auto& base = ref.entries()[i].tensor.data;
      for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += w * (src[j] - base[j]);
    }
  }
  ParameterSet out = ref;
  for (std::size_t i = 0; i < out.entries().size(); ++i) {
    auto& dst = out.entries()[i].tensor.data;
    const auto& d = delta.entries()[i].tensor.data;
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += d[j];
  }
  return out;
}

double validation_mse(const ParameterSet& params, const ClientState& client,
                      const model::ModelConfig& model_cfg, const FedConfig& cfg) {
  require(!client.validation.empty(),
          "client " + std::to_string(client.client_id) + " has no validation windows");
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < client.validation.size(); ++i) {
    const auto& x = client.validation[i];
    const auto mask = draw_mask(x, cfg.mask_spec, derive_seed(client.rng_seed, "validation", {i}));
    if (mask.masked_count() == 0) continue;
    const auto trace = model::forward(x, mask, params, model_cfg);
    sum += model::masked_mse(trace.reconstruction_normalized, trace.normalized, mask);
    ++count;
  }
  return count ? sum / static_cast<double>(count) : 0.0;
}

RoundResult run_round(const ParameterSet& server_params, std::vector<ClientState>& clients,
                      const model::ModelConfig& model_cfg, const FedConfig& cfg, int round_index,
                      int workers) {
  const auto started = std::chrono::steady_clock::now();
  const auto participants =
      sample_clients(static_cast<int>(clients.size()), cfg.participation_rate,
                     derive_seed(cfg.seed, "round", {static_cast<std::uint64_t>(round_index)}));
  const ParameterSet broadcast = cfg.serialize_roundtrip ? codec_roundtrip(server_params) : server_params;

  std::vector<LocalResult> results(participants.size());
  parallel_for(participants.size(), workers, [&](std::size_t i) {
    const auto& client = clients[static_cast<std::size_t>(participants[i])];
    results[i] = local_update(broadcast, client, model_cfg, cfg, round_index);
    if (cfg.serialize_roundtrip) results[i].params = codec_roundtrip(results[i].params);
  });

  RoundResult out;
  auto& report = out.report;
  report.round_index = round_index;
  report.participants = participants;
  std::vector<ClientUpdate> updates;
  double total = 0.0;
  for (std::size_t i = 0; i < participants.size(); ++i) total += static_cast<double>(results[i].n_samples);
  for (std::size_t i = 0; i < participants.size(); ++i) {
    report.client_losses.push_back(results[i].mean_loss);
    report.client_samples.push_back(results[i].n_samples);
    report.weighted_loss += static_cast<double>(results[i].n_samples) / total * results[i].mean_loss;
    clients[static_cast<std::size_t>(participants[i])].local_params = results[i].params;
    updates.push_back({participants[i], std::move(results[i].params), results[i].n_samples});
  }
  out.params = aggregate(std::move(updates));

  if (cfg.server_atm_momentum > 0.0) {
    const double mu = cfg.server_atm_momentum;
    for (std::size_t i = 0; i < out.params.entries().size(); ++i) {
      auto& e = out.params.entries()[i];
      if (!e.atm) continue;
      const auto& prev = server_params.entries()[i].tensor.data;
      for (std::size_t j = 0; j < e.tensor.data.size(); ++j) {
        e.tensor.data[j] = (1.0 - mu) * e.tensor.data[j] + mu * prev[j];
      }
    }
  }

  if (cfg.evaluate_each_round) {
    report.validation_mse.assign(clients.size(), 0.0);
    parallel_for(clients.size(), workers, [&](std::size_t i) {
      report.validation_mse[i] = validation_mse(out.params, clients[i], model_cfg, cfg);
    });
    double n_all = 0.0;
    for (const auto& c : clients) n_all += static_cast<double>(c.n_samples);
    for (std::size_t i = 0; i < clients.size(); ++i) {
      report.weighted_validation_mse +=
          static_cast<double>(clients[i].n_samples) / n_all * report.validation_mse[i];
    }
  }
  report.wall_time_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  report.timestamp = utc_timestamp();
  return out;
}

ParameterSet initial_parameters(const model::ModelConfig& model_cfg, const FedConfig& cfg) {
  return model::init_params(model_cfg, derive_seed(cfg.seed, "init"));
}

PretrainResult run_pretraining(const model::ModelConfig& model_cfg, const FedConfig& cfg,
                               std::vector<ClientState> clients, int workers,
                               const RoundCallback& on_round) {
  model_cfg.validate();
  cfg.validate();
  require(static_cast<int>(clients.size()) == cfg.num_clients,
          "fed.num_clients (" + std::to_string(cfg.num_clients) + ") does not match the " +
              std::to_string(clients.size()) + " clients provided");
  PretrainResult result;
  result.initial_params = initial_parameters(model_cfg, cfg);
  ParameterSet server = result.initial_params;
  for (int r = 0; r < cfg.rounds; ++r) {
    auto round = run_round(server, clients, model_cfg, cfg, r, workers);
    server = std::move(round.params);
    if (on_round) on_round(round.report, server);
    result.reports.push_back(std::move(round.report));
  }
  result.final_params = std::move(server);
  return result;
}

PretrainResult run_pretraining(const model::ModelConfig& model_cfg, const FedConfig& cfg,
                               const std::vector<data::SyntheticClientSpec>& specs, int workers,
                               const RoundCallback& on_round) {
  std::vector<data::ClientSplit> splits;
  for (const auto& s : specs) splits.push_back(data::gen_synthetic_client(s));
  return run_pretraining(model_cfg, cfg, make_clients(splits, model_cfg, cfg), workers, on_round);
}

data::SyntheticClientSpec heterogeneous_client_spec(int index, int length, int channels,
                                                    std::uint64_t seed) {
  struct Domain {
    const char* tag;
    std::int64_t resolution;
    std::vector<data::SeasonalComponent> seasonal;
    double noise;
  };
  static const Domain domains[] = {
      {"network", 30, {{1.0, 40}, {0.5, 120}}, 0.30},
      {"energy", 300, {{1.0, 48}, {0.4, 12}}, 0.20},
      {"weather", 3600, {{1.0, 24}, {0.6, 84}}, 0.15},
      {"natural", 86400, {{1.0, 7}, {0.8, 30}}, 0.10},
      {"traffic", 600, {{1.0, 36}, {0.5, 9}}, 0.20},
  };
  require(index >= 0 && index < 5, "heterogeneous_client_spec: index must lie in [0, 5)");
  const auto& d = domains[index];
  data::SyntheticClientSpec spec;
  spec.resolution_seconds = d.resolution;
  spec.domain_tag = d.tag;
  spec.seasonal = d.seasonal;
  spec.noise_std = d.noise;
  spec.trend_slope = 2.0 / length;
  spec.length = length;
  spec.channels = channels;
  spec.seed = derive_seed(seed, "synthetic-client", {static_cast<std::uint64_t>(index)});
  return spec;
}

std::vector<data::SyntheticClientSpec> heterogeneous_client_specs(int length, int channels,
                                                                  std::uint64_t seed) {
  std::vector<data::SyntheticClientSpec> out;
  for (int i = 0; i < 4; ++i) out.push_back(heterogeneous_client_spec(i, length, channels, seed));
  return out;
}

}  // namespace ffts::fed
