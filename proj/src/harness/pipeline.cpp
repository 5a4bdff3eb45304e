#include "ffts/harness/pipeline.hpp"

#include "ffts/harness/checkpoint.hpp"
#include "ffts/rng.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>

namespace ffts::harness {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw UsageError("cannot write " + path.string());
  out << text;
  if (!out) throw RuntimeError("failed while writing " + path.string());
}

std::string format_value(double v) {
  std::ostringstream ss;
  ss << v;
  return ss.str();
}

CheckpointMeta meta_for(const ExperimentConfig& cfg, const std::string& hash, int round) {
  return {hash, round, to_json(cfg.model)};
}

}  // namespace

json report_to_json(const fed::RoundReport& r, const std::string& config_hash) {
  return {{"config_hash", config_hash},
          {"round", r.round_index},
          {"participants", r.participants},
          {"client_losses", r.client_losses},
          {"client_samples", r.client_samples},
          {"weighted_loss", r.weighted_loss},
          {"validation_mse", r.validation_mse},
          {"weighted_validation_mse", r.weighted_validation_mse},
          {"timing", {{"timestamp", r.timestamp}, {"wall_time_seconds", r.wall_time_seconds}}}};
}

std::vector<fs::path> generate_data(const ExperimentConfig& cfg, const fs::path& out_dir) {
  cfg.validate();
  const fs::path dir = out_dir / "data";
  fs::create_directories(dir);
  std::vector<fs::path> written;
  auto save = [&](const data::SyntheticClientSpec& spec, const fs::path& path) {
    const auto split = data::gen_synthetic_client(spec);
    data::TimeSeries full = split.train;
    full.values.resize(split.train.length() + split.validation.length(), split.train.channels());
    full.values << split.train.values, split.validation.values;
    data::save_series(path, full, spec.seed, static_cast<int>(split.train.length()));
    written.push_back(path);
  };
  for (std::size_t i = 0; i < cfg.clients.size(); ++i) {
    if (cfg.clients[i].synthetic) save(*cfg.clients[i].synthetic, dir / ("client_" + std::to_string(i) + ".bin"));
  }
  save(cfg.downstream.client, dir / "downstream.bin");
  return written;
}

PretrainRun pretrain(const ExperimentConfig& cfg, int workers, const fs::path& out_dir,
                     std::ostream* log) {
  cfg.validate();
  require(workers >= 1, "workers must be >= 1");
  fs::create_directories(out_dir);
  PretrainRun run;
  run.config_hash = config_hash(cfg);
  auto clients = fed::make_clients(cfg.load_clients(), cfg.model, cfg.fed);

  std::ofstream reports(out_dir / "reports.jsonl", std::ios::binary | std::ios::trunc);
  if (!reports) throw UsageError("cannot write " + (out_dir / "reports.jsonl").string());
  const auto start = std::chrono::steady_clock::now();
  run.result = fed::run_pretraining(
      cfg.model, cfg.fed, std::move(clients), workers,
      [&](const fed::RoundReport& r, const ParameterSet&) {
        reports << report_to_json(r, run.config_hash).dump() << '\n';
        reports.flush();
        if (log != nullptr) {
          *log << "round " << r.round_index << "  loss " << r.weighted_loss << "  val_mse "
               << r.weighted_validation_mse << "  (" << r.participants.size() << " clients, "
               << r.wall_time_seconds << " s)\n";
        }
      });
  const double total = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  run.initial_checkpoint = out_dir / "checkpoint_initial.ckpt";
  save_checkpoint(run.result.initial_params, meta_for(cfg, run.config_hash, 0), run.initial_checkpoint);
  if (cfg.fed.rounds > 0) {
    run.final_checkpoint = out_dir / "checkpoint_final.ckpt";
    save_checkpoint(run.result.final_params, meta_for(cfg, run.config_hash, cfg.fed.rounds),
                    run.final_checkpoint);
  }
  json summary = {{"config_hash", run.config_hash},
                  {"config", to_json(cfg)},
                  {"rounds", cfg.fed.rounds},
                  {"parameters", run.result.final_params.numel()},
                  {"timing", {{"total_wall_seconds", total}}}};
  if (!run.result.reports.empty()) {
    const auto& first = run.result.reports.front();
    const auto& last = run.result.reports.back();
    summary["first_round"] = {{"weighted_loss", first.weighted_loss},
                              {"weighted_validation_mse", first.weighted_validation_mse}};
    summary["final_round"] = {{"weighted_loss", last.weighted_loss},
                              {"weighted_validation_mse", last.weighted_validation_mse}};
  }
  write_text(out_dir / "summary.json", summary.dump(2) + "\n");
  return run;
}

DownstreamData downstream_data(const ExperimentConfig& cfg) {
  DownstreamData d;
  d.split = data::gen_synthetic_client(cfg.downstream.client);
  d.scaler = data::Scaler::fit(d.split.train);
  d.anomalous_test = d.split.validation;
  const auto& a = cfg.downstream.anomalies;
  d.labels = data::inject_spikes(d.anomalous_test, a.count, a.width, a.amplitude_sigma,
                                 derive_seed(cfg.master_seed, "downstream.anomalies"));
  return d;
}

ParameterSet load_pretrained(const ExperimentConfig& cfg, const fs::path& checkpoint) {
  auto [params, meta] = load_checkpoint(checkpoint, config_hash(cfg));
  return std::move(params);
}

fs::path adapted_checkpoint_path(const fs::path& out_dir, std::size_t task_index,
                                 const downstream::TaskSpec& spec) {
  return out_dir / ("adapted_" + std::to_string(task_index) + "_" + downstream::to_string(spec.task) + ".ckpt");
}

void save_adapted(const downstream::AdaptedModel& model, const std::string& config_hash,
                  const fs::path& path) {
  ParameterSet all = model.encoder;
  for (const auto& e : model.head.entries()) all.add(e.name, e.tensor, e.atm);
  save_checkpoint(all, {config_hash, -1, {{"model", to_json(model.config)}, {"task", downstream::to_json(model.spec)}}},
                  path);
}

downstream::AdaptedModel load_adapted(const fs::path& path, const std::optional<std::string>& expected_hash) {
  auto [all, meta] = load_checkpoint(path, expected_hash);
  require(meta.model_config.is_object() && meta.model_config.contains("task"),
          path.string() + " is not an adapted-model checkpoint");
  downstream::AdaptedModel m;
  m.config = model_config_from_json(meta.model_config.at("model"));
  m.spec = downstream::task_spec_from_json(meta.model_config.at("task"));
  for (const auto& e : all.entries()) {
    (e.name.rfind("adapt.", 0) == 0 ? m.head : m.encoder).add(e.name, e.tensor, e.atm);
  }
  return m;
}

std::vector<FinetuneRun> finetune_tasks(const ExperimentConfig& cfg, const ParameterSet& pretrained,
                                        const fs::path& out_dir, std::ostream* log) {
  cfg.validate();
  fs::create_directories(out_dir);
  const auto hash = config_hash(cfg);
  const auto data = downstream_data(cfg);
  std::vector<FinetuneRun> runs;
  json summary = json::array();
  for (std::size_t i = 0; i < cfg.task_specs.size(); ++i) {
    const auto& spec = cfg.task_specs[i];
    auto model = downstream::attach_head(pretrained, cfg.model, spec,
                                         derive_seed(cfg.master_seed, "head", {i}));
    auto result = downstream::finetune(std::move(model), data.split.train, cfg.downstream.finetune);
    FinetuneRun run{std::move(result.model), std::move(result.loss_trace),
                    adapted_checkpoint_path(out_dir, i, spec)};
    save_adapted(run.model, hash, run.checkpoint);
    summary.push_back({{"task", downstream::to_json(spec)},
                       {"samples", result.num_samples},
                       {"loss_trace", run.loss_trace},
                       {"checkpoint", run.checkpoint.filename().string()}});
    if (log != nullptr) {
      *log << "finetune " << downstream::to_string(spec.task) << ": " << result.num_samples
           << " windows, loss " << (run.loss_trace.empty() ? 0.0 : run.loss_trace.front()) << " -> "
           << (run.loss_trace.empty() ? 0.0 : run.loss_trace.back()) << "\n";
    }
    runs.push_back(std::move(run));
  }
  write_text(out_dir / "finetune.json", json{{"config_hash", hash}, {"tasks", summary}}.dump(2) + "\n");
  return runs;
}

std::vector<downstream::EvalReport> evaluate_tasks(const ExperimentConfig& cfg,
                                                   const ParameterSet& pretrained,
                                                   const fs::path& out_dir, std::ostream* log) {
  cfg.validate();
  fs::create_directories(out_dir);
  const auto hash = config_hash(cfg);
  const auto data = downstream_data(cfg);
  const int T = cfg.model.seq_len;
  std::vector<downstream::EvalReport> reports;
  for (std::size_t i = 0; i < cfg.task_specs.size(); ++i) {
    const auto& spec = cfg.task_specs[i];
    const auto path = adapted_checkpoint_path(out_dir, i, spec);
    std::optional<downstream::AdaptedModel> adapted;
    if (fs::exists(path)) adapted = load_adapted(path, hash);
    downstream::EvalReport r;
    switch (spec.task) {
      case downstream::Task::forecast: {
        const auto model = adapted ? *adapted
                                   : downstream::attach_head(pretrained, cfg.model, spec,
                                                             derive_seed(cfg.master_seed, "head", {i}));
        r = downstream::evaluate_forecast(model, data.split.validation, cfg.downstream.eval_stride,
                                          data.scaler);
        break;
      }
      case downstream::Task::impute: {
        downstream::ImputeEvalOptions o;
        o.seq_len = T;
        o.mask_ratio = *spec.mask_ratio;
        o.seed = derive_seed(cfg.master_seed, "eval.impute", {i});
        o.scaler = data.scaler;
        const auto imputer = adapted ? downstream::imputer(*adapted)
                                     : downstream::pretrained_imputer(pretrained, cfg.model);
        r = downstream::evaluate_impute(imputer, data.split.validation, o);
        r.metrics["linear_interp_mse"] =
            downstream::evaluate_impute(downstream::linear_interpolation_imputer(), data.split.validation, o)
                .metrics.at("mse");
        break;
      }
      case downstream::Task::detect: {
        const auto rec = adapted ? downstream::reconstructor(*adapted)
                                 : downstream::pretrained_reconstructor(pretrained, cfg.model);
        const auto train_scores = downstream::anomaly_scores(rec, data.split.train, T);
        const auto test_scores = downstream::anomaly_scores(rec, data.anomalous_test, T);
        r = downstream::detect_anomalies(train_scores, test_scores, data.labels, *spec.anomaly_quantile, false);
        const auto pa = downstream::detect_anomalies(train_scores, test_scores, data.labels,
                                                     *spec.anomaly_quantile, true);
        for (const char* k : {"precision", "recall", "f1"}) r.metrics[std::string(k) + "_adjusted"] = pa.metrics.at(k);
        r.metrics.erase("point_adjust");
        r.dataset = data.anomalous_test.domain_tag + " test split with " +
                    std::to_string(cfg.downstream.anomalies.count) + " injected spikes";
        break;
      }
    }
    r.config_hash = hash;
    if (!adapted) r.flags.push_back("zero_shot");
    if (log != nullptr) {
      *log << downstream::to_string(spec.task) << (adapted ? "" : " (zero-shot)") << ":";
      for (const auto& [k, v] : r.metrics) *log << "  " << k << "=" << v;
      *log << "\n";
    }
    reports.push_back(std::move(r));
  }
  json out = json::array();
  for (const auto& r : reports) out.push_back(r.to_json());
  write_text(out_dir / "eval_reports.json", out.dump(2) + "\n");
  return reports;
}

AblationAxis ablation_axis_from_string(const std::string& name) {
  if (name == "k") return AblationAxis::top_k;
  if (name == "lambda") return AblationAxis::lambda;
  if (name == "prtp") return AblationAxis::participation;
  if (name == "experts") return AblationAxis::experts;
  throw UsageError("unknown ablation axis '" + name + "' (expected k, lambda, prtp or experts)");
}

std::string to_string(AblationAxis axis) {
  switch (axis) {
    case AblationAxis::top_k: return "k";
    case AblationAxis::lambda: return "lambda";
    case AblationAxis::participation: return "prtp";
    case AblationAxis::experts: return "experts";
  }
  return "unknown";
}

ExperimentConfig with_axis_value(const ExperimentConfig& cfg, AblationAxis axis, double value) {
  ExperimentConfig c = cfg;
  auto as_int = [&](const char* what) {
    require(value == std::floor(value), std::string(what) + " values must be integers, got " + format_value(value));
    return static_cast<int>(value);
  };
  switch (axis) {
    case AblationAxis::top_k:
      c.model.top_k = as_int("k");
      break;
    case AblationAxis::lambda:
      c.fed.lambda = value;
      break;
    case AblationAxis::participation:
      c.fed.participation_rate = value;
      break;
    case AblationAxis::experts: {
      const int n = as_int("experts");
      require(n >= 1 && n <= c.model.num_experts,
              "experts value " + std::to_string(n) + " must lie in [1, model.num_experts (" +
                  std::to_string(c.model.num_experts) + ")]");
      c.model.active_experts.clear();
      for (int e = 0; e < n; ++e) c.model.active_experts.push_back(e);
      c.model.top_k = std::min(c.model.top_k, n);
      break;
    }
  }
  c.validate();
  return c;
}

std::vector<AblationRow> ablate(const ExperimentConfig& cfg, AblationAxis axis,
                                const std::vector<double>& values, int workers,
                                const fs::path& out_dir, std::ostream* log) {
  require(!values.empty(), "ablate: no values given");
  require(cfg.fed.rounds >= 1, "ablate: fed.rounds must be >= 1");
  // Validate every value before any run starts.
  std::vector<ExperimentConfig> configs;
  for (double v : values) configs.push_back(with_axis_value(cfg, axis, v));
  fs::create_directories(out_dir);
  const auto name = to_string(axis);
  std::vector<AblationRow> rows;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto run_dir = out_dir / ("ablate_" + name + "_" + format_value(values[i]));
    const auto run = pretrain(configs[i], workers, run_dir);
    const auto& last = run.result.reports.back();
    rows.push_back({name, values[i], last.weighted_loss, last.weighted_validation_mse, configs[i].fed.rounds});
    if (log != nullptr) {
      *log << name << "=" << format_value(values[i]) << "  weighted_loss " << last.weighted_loss
           << "  val_mse " << last.weighted_validation_mse << "\n";
    }
  }
  std::ostringstream csv, jsonl;
  csv << "axis,value,rounds,final_weighted_loss,final_validation_mse\n";
  csv.precision(10);
  for (const auto& r : rows) {
    csv << r.axis << "," << format_value(r.value) << "," << r.rounds << "," << r.final_weighted_loss << ","
        << r.final_validation_mse << "\n";
    jsonl << json{{"axis", r.axis},
                   {"value", r.value},
                   {"rounds", r.rounds},
                   {"final_weighted_loss", r.final_weighted_loss},
                   {"final_validation_mse", r.final_validation_mse},
                   {"config_hash", config_hash(cfg)}}
                 .dump()
          << "\n";
  }
  write_text(out_dir / ("ablation_" + name + ".csv"), csv.str());
  write_text(out_dir / ("ablation_" + name + ".jsonl"), jsonl.str());
  return rows;
}

}  // namespace ffts::harness
