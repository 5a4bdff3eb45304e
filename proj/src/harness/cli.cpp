#include "ffts/harness/cli.hpp"

#include "ffts/harness/config.hpp"
#include "ffts/harness/pipeline.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <ostream>
#include <sstream>

namespace ffts::harness {

namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config;
  std::string output;
  int workers = 0;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--output", c.output, "Output directory (overrides FFTS_OUTPUT_DIR and the config)");
}

fs::path output_dir(const ExperimentConfig& cfg, const Common& c) {
  if (!c.output.empty()) return c.output;
  if (const char* env = std::getenv("FFTS_OUTPUT_DIR"); env != nullptr && *env != '\0') return env;
  return cfg.output_dir;
}

int worker_count(const Common& c) {
  if (c.workers > 0) return c.workers;
  if (const char* env = std::getenv("FFTS_WORKERS"); env != nullptr && *env != '\0') {
    int w = 0;
    std::istringstream ss(env);
    if (!(ss >> w) || w < 1) throw UsageError("FFTS_WORKERS must be a positive integer, got '" + std::string(env) + "'");
    return w;
  }
  return 1;
}

std::vector<double> parse_values(const std::string& text) {
  std::vector<double> values;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    require(used == item.size() && !item.empty(), "--values: '" + item + "' is not a number");
    values.push_back(v);
  }
  require(!values.empty(), "--values must list at least one value");
  return values;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Federated time-series foundation-model pretraining simulator", "ffts"};
  app.require_subcommand(1);

  Common gen_opts, pre_opts, ft_opts, ev_opts, ab_opts;
  int rounds = -1;
  std::string checkpoint, ev_checkpoint, axis, values;
  int ft_epochs = -1;

  auto* gen = app.add_subcommand("gen-data", "Write the synthetic client datasets to <output>/data");
  add_common(gen, gen_opts);

  auto* pre = app.add_subcommand("pretrain", "Run federated pretraining");
  add_common(pre, pre_opts);
  pre->add_option("--rounds", rounds, "Override fed.rounds")->check(CLI::NonNegativeNumber);
  pre->add_option("--workers", pre_opts.workers, "Parallel client updates (default FFTS_WORKERS or 1)")
      ->check(CLI::PositiveNumber);

  auto* ft = app.add_subcommand("finetune", "Fine-tune a task head for every task spec");
  add_common(ft, ft_opts);
  ft->add_option("--checkpoint", checkpoint, "Pretrained checkpoint")->required()->check(CLI::ExistingFile);
  ft->add_option("--epochs", ft_epochs, "Override downstream.finetune.epochs")->check(CLI::NonNegativeNumber);

  auto* ev = app.add_subcommand("evaluate", "Evaluate every task spec on the held-out client");
  add_common(ev, ev_opts);
  ev->add_option("--checkpoint", ev_checkpoint, "Pretrained checkpoint")->required()->check(CLI::ExistingFile);

  auto* ab = app.add_subcommand("ablate", "Sweep one axis and tabulate the final losses");
  add_common(ab, ab_opts);
  ab->add_option("--axis", axis, "k, lambda, prtp or experts")
      ->required()
      ->check(CLI::IsMember({"k", "lambda", "prtp", "experts"}));
  ab->add_option("--values", values, "Comma-separated values")->required();
  ab->add_option("--workers", ab_opts.workers, "Parallel client updates")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*gen) {
      const auto cfg = load_config(gen_opts.config);
      for (const auto& p : generate_data(cfg, output_dir(cfg, gen_opts))) out << "wrote " << p.string() << "\n";
    } else if (*pre) {
      auto cfg = load_config(pre_opts.config);
      if (rounds >= 0) cfg.fed.rounds = rounds;
      const auto dir = output_dir(cfg, pre_opts);
      const auto run = pretrain(cfg, worker_count(pre_opts), dir, &out);
      out << "config hash " << run.config_hash << "\n";
      out << "wrote " << run.initial_checkpoint.string() << "\n";
      if (!run.final_checkpoint.empty()) out << "wrote " << run.final_checkpoint.string() << "\n";
    } else if (*ft) {
      auto cfg = load_config(ft_opts.config);
      if (ft_epochs >= 0) cfg.downstream.finetune.epochs = ft_epochs;
      const auto params = load_pretrained(cfg, checkpoint);
      for (const auto& r : finetune_tasks(cfg, params, output_dir(cfg, ft_opts), &out)) {
        out << "wrote " << r.checkpoint.string() << "\n";
      }
    } else if (*ev) {
      const auto cfg = load_config(ev_opts.config);
      const auto params = load_pretrained(cfg, ev_checkpoint);
      evaluate_tasks(cfg, params, output_dir(cfg, ev_opts), &out);
    } else if (*ab) {
      const auto cfg = load_config(ab_opts.config);
      const auto dir = output_dir(cfg, ab_opts);
      const auto rows = ablate(cfg, ablation_axis_from_string(axis), parse_values(values),
                               worker_count(ab_opts), dir, &out);
      out << "wrote " << (dir / ("ablation_" + axis + ".csv")).string() << " (" << rows.size() << " rows)\n";
    }
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace ffts::harness
