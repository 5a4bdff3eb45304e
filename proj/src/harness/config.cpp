#include "ffts/harness/config.hpp"

#include "ffts/rng.hpp"

#include <array>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace ffts::harness {

using nlohmann::json;

namespace {

constexpr std::array<const char*, 5> kPresets{"network", "energy", "weather", "natural", "traffic"};

/// Reads fields of one JSON object, remembering which keys were consumed so
/// leftovers can be reported as unknown.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    require(j_.is_object(), where() + " must be an object");
  }

  std::string field(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  bool has(const std::string& key) {
    used_.insert(key);
    return j_.contains(key);
  }

  template <typename T>
  T get(const std::string& key, T fallback) {
    if (!has(key)) return fallback;
    return as<T>(j_.at(key), field(key));
  }

  const json& raw(const std::string& key) {
    used_.insert(key);
    return j_.at(key);
  }

  void finish() const {
    for (const auto& [key, _] : j_.items()) {
      require(used_.count(key) > 0, "unknown field '" + field(key) + "'");
    }
  }

  template <typename T>
  static T as(const json& v, const std::string& name) {
    try {
      if constexpr (std::is_same_v<T, bool>) {
        require(v.is_boolean(), name + " must be a boolean");
      } else if constexpr (std::is_integral_v<T>) {
        require(v.is_number_integer(), name + " must be an integer");
        if constexpr (std::is_unsigned_v<T>) require(v.is_number_unsigned(), name + " must be a nonnegative integer");
      } else if constexpr (std::is_floating_point_v<T>) {
        require(v.is_number(), name + " must be a number");
      } else if constexpr (std::is_same_v<T, std::string>) {
        require(v.is_string(), name + " must be a string");
      }
      return v.get<T>();
    } catch (const json::exception& e) {
      throw UsageError(name + ": " + e.what());
    }
  }

 private:
  std::string where() const { return path_.empty() ? "config" : path_; }

  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

model::AtmPlacement placement_from(const std::string& s, const std::string& name) {
  if (s == "every_block") return model::AtmPlacement::every_block;
  if (s == "final_block") return model::AtmPlacement::final_block;
  throw UsageError(name + " must be 'every_block' or 'final_block', got '" + s + "'");
}

const char* placement_name(model::AtmPlacement p) {
  return p == model::AtmPlacement::every_block ? "every_block" : "final_block";
}

model::ModelConfig read_model(const json& j) {
  Fields f(j, "model");
  model::ModelConfig m;
  m.seq_len = f.get("seq_len", m.seq_len);
  m.d_model = f.get("d_model", m.d_model);
  m.num_layers = f.get("num_layers", m.num_layers);
  m.num_heads = f.get("num_heads", m.num_heads);
  m.patch.patch_length = f.get("patch_length", m.patch.patch_length);
  m.patch.stride = f.get("patch_stride", m.patch.stride);
  m.num_experts = f.get("num_experts", m.num_experts);
  m.top_k = f.get("top_k", m.top_k);
  m.ffn_hidden = f.get("ffn_hidden", m.ffn_hidden);
  m.gate_hidden = f.get("gate_hidden", m.gate_hidden);
  m.decomposition_kernel = f.get("decomposition_kernel", m.decomposition_kernel);
  m.atm_placement = placement_from(f.get<std::string>("atm_placement", placement_name(m.atm_placement)),
                                   f.field("atm_placement"));
  m.atm_residual = f.get("atm_residual", m.atm_residual);
  m.timescale_pooling = f.get("timescale_pooling", m.timescale_pooling);
  if (f.has("active_experts")) {
    const auto& a = f.raw("active_experts");
    require(a.is_array(), f.field("active_experts") + " must be an array");
    for (std::size_t i = 0; i < a.size(); ++i) {
      m.active_experts.push_back(Fields::as<int>(a[i], f.field("active_experts") + "[" + std::to_string(i) + "]"));
    }
  }
  f.finish();
  return m;
}

fed::FedConfig read_fed(const json& j, int default_clients) {
  Fields f(j, "fed");
  fed::FedConfig c;
  c.num_clients = f.get("num_clients", default_clients);
  c.participation_rate = f.get("participation_rate", c.participation_rate);
  c.local_epochs = f.get("local_epochs", c.local_epochs);
  c.rounds = f.get("rounds", c.rounds);
  c.lambda = f.get("lambda", c.lambda);
  c.mask_spec.mean_masked_length = f.get("mean_masked_length", c.mask_spec.mean_masked_length);
  c.mask_spec.mask_ratio = f.get("mask_ratio", c.mask_spec.mask_ratio);
  c.mask_spec.shared_across_channels = f.get("shared_mask", c.mask_spec.shared_across_channels);
  c.learning_rate = f.get("learning_rate", c.learning_rate);
  c.momentum = f.get("momentum", c.momentum);
  c.grad_clip = f.get("grad_clip", c.grad_clip);
  c.batch_size = f.get("batch_size", c.batch_size);
  const auto algo = f.get<std::string>("algorithm", "ffts");
  if (algo == "ffts") c.algorithm = fed::Algorithm::ffts;
  else if (algo == "fedavg") c.algorithm = fed::Algorithm::fedavg;
  else throw UsageError(f.field("algorithm") + " must be 'ffts' or 'fedavg', got '" + algo + "'");
  c.server_atm_momentum = f.get("server_atm_momentum", c.server_atm_momentum);
  c.serialize_roundtrip = f.get("serialize_roundtrip", c.serialize_roundtrip);
  c.window_stride = f.get("window_stride", c.window_stride);
  c.evaluate_each_round = f.get("evaluate_each_round", c.evaluate_each_round);
  f.finish();
  return c;
}

int preset_index(const std::string& name, const std::string& field) {
  for (std::size_t i = 0; i < kPresets.size(); ++i) {
    if (name == kPresets[i]) return static_cast<int>(i);
  }
  throw UsageError(field + ": unknown preset '" + name +
                   "' (expected network, energy, weather, natural or traffic)");
}

/// Either {"preset": name, ...overrides} or a full explicit spec.
data::SyntheticClientSpec read_synthetic(Fields& f, std::uint64_t default_seed) {
  data::SyntheticClientSpec s;
  const int length = f.get("length", 4000);
  const int channels = f.get("channels", 1);
  if (f.has("preset")) {
    const auto name = f.get<std::string>("preset", "");
    s = fed::heterogeneous_client_spec(preset_index(name, f.field("preset")), length, channels,
                                       default_seed);
  } else {
    s.length = length;
    s.channels = channels;
    s.seed = default_seed;
  }
  s.resolution_seconds = f.get("resolution_seconds", s.resolution_seconds);
  s.trend_slope = f.get("trend_slope", s.trend_slope);
  s.noise_std = f.get("noise_std", s.noise_std);
  s.seed = f.get("seed", s.seed);
  s.domain_tag = f.get("domain_tag", s.domain_tag);
  s.train_fraction = f.get("train_fraction", s.train_fraction);
  if (f.has("seasonal")) {
    const auto& arr = f.raw("seasonal");
    require(arr.is_array(), f.field("seasonal") + " must be an array");
    s.seasonal.clear();
    for (std::size_t i = 0; i < arr.size(); ++i) {
      Fields c(arr[i], f.field("seasonal") + "[" + std::to_string(i) + "]");
      data::SeasonalComponent comp;
      comp.amplitude = c.get("amplitude", 0.0);
      comp.period_steps = c.get("period_steps", 2);
      c.finish();
      s.seasonal.push_back(comp);
    }
  }
  return s;
}

json synthetic_json(const data::SyntheticClientSpec& s) {
  json seasonal = json::array();
  for (const auto& c : s.seasonal) seasonal.push_back({{"amplitude", c.amplitude}, {"period_steps", c.period_steps}});
  return {{"resolution_seconds", s.resolution_seconds},
          {"trend_slope", s.trend_slope},
          {"seasonal", seasonal},
          {"noise_std", s.noise_std},
          {"length", s.length},
          {"channels", s.channels},
          {"seed", s.seed},
          {"domain_tag", s.domain_tag},
          {"train_fraction", s.train_fraction}};
}

downstream::FinetuneOptions read_finetune(const json& j, std::uint64_t default_seed) {
  Fields f(j, "downstream.finetune");
  downstream::FinetuneOptions o;
  o.epochs = 20;
  o.learning_rate = 0.01;
  o.epochs = f.get("epochs", o.epochs);
  o.learning_rate = f.get("learning_rate", o.learning_rate);
  o.momentum = f.get("momentum", o.momentum);
  o.grad_clip = f.get("grad_clip", o.grad_clip);
  o.batch_size = f.get("batch_size", o.batch_size);
  o.data_fraction = f.get("data_fraction", o.data_fraction);
  o.stride = f.get("stride", o.stride);
  o.seed = f.get("seed", default_seed);
  f.finish();
  return o;
}

DownstreamConfig read_downstream(const json& j, std::uint64_t master) {
  Fields f(j, "downstream");
  DownstreamConfig d;
  {
    const json client = f.has("client") ? f.raw("client") : json{{"preset", "traffic"}};
    Fields c(client, "downstream.client");
    d.client = read_synthetic(c, derive_seed(master, "downstream.client"));
    c.finish();
  }
  d.finetune = read_finetune(f.has("finetune") ? f.raw("finetune") : json::object(),
                             derive_seed(master, "downstream.finetune"));
  if (f.has("anomalies")) {
    Fields a(f.raw("anomalies"), "downstream.anomalies");
    d.anomalies.count = a.get("count", d.anomalies.count);
    d.anomalies.width = a.get("width", d.anomalies.width);
    d.anomalies.amplitude_sigma = a.get("amplitude_sigma", d.anomalies.amplitude_sigma);
    a.finish();
  }
  d.eval_stride = f.get("eval_stride", d.eval_stride);
  f.finish();
  return d;
}

template <typename Fn>
void with_prefix(const std::string& prefix, Fn&& fn) {
  try {
    fn();
  } catch (const UsageError& e) {
    const std::string msg = e.what();
    if (msg.rfind(prefix, 0) == 0) throw;
    throw UsageError(prefix + ": " + msg);
  }
}

}  // namespace

data::ClientSplit ClientSource::load() const {
  require(synthetic.has_value() != path.has_value(), "client source needs exactly one of spec or path");
  return synthetic ? data::gen_synthetic_client(*synthetic) : data::load_client(*path);
}

void ExperimentConfig::validate() const {
  model.validate();
  fed.validate();
  require(!clients.empty(), "clients must list at least one client");
  require(fed.num_clients == static_cast<int>(clients.size()),
          "fed.num_clients (" + std::to_string(fed.num_clients) + ") must equal the number of clients (" +
              std::to_string(clients.size()) + ")");
  for (std::size_t i = 0; i < clients.size(); ++i) {
    const std::string name = "clients[" + std::to_string(i) + "]";
    require(clients[i].synthetic.has_value() != clients[i].path.has_value(),
            name + " needs exactly one of a synthetic spec or a path");
    if (clients[i].synthetic) with_prefix(name, [&] { clients[i].synthetic->validate(); });
  }
  for (std::size_t i = 0; i < task_specs.size(); ++i) {
    const std::string name = "task_specs[" + std::to_string(i) + "]";
    with_prefix(name, [&] { task_specs[i].validate(); });
    require(task_specs[i].channels == downstream.client.channels,
            name + ".channels (" + std::to_string(task_specs[i].channels) +
                ") must equal downstream.client.channels (" +
                std::to_string(downstream.client.channels) + ")");
  }
  with_prefix("downstream.client", [&] { downstream.client.validate(); });
  const auto& ft = downstream.finetune;
  require(ft.epochs >= 0, "downstream.finetune.epochs must be nonnegative");
  require(ft.learning_rate >= 0.0, "downstream.finetune.learning_rate must be nonnegative");
  require(ft.batch_size >= 1, "downstream.finetune.batch_size must be positive");
  require(ft.data_fraction > 0.0 && ft.data_fraction <= 1.0,
          "downstream.finetune.data_fraction must lie in (0, 1]");
  require(downstream.anomalies.count >= 0, "downstream.anomalies.count must be nonnegative");
  require(downstream.anomalies.width >= 1, "downstream.anomalies.width must be positive");
  require(downstream.eval_stride >= 1, "downstream.eval_stride must be positive");
  require(!output_dir.empty(), "output_dir must not be empty");
}

std::vector<data::ClientSplit> ExperimentConfig::load_clients() const {
  std::vector<data::ClientSplit> out;
  for (const auto& c : clients) out.push_back(c.load());
  return out;
}

model::ModelConfig model_config_from_json(const json& j) { return read_model(j); }

json to_json(const model::ModelConfig& m) {
  return {{"seq_len", m.seq_len},
          {"d_model", m.d_model},
          {"num_layers", m.num_layers},
          {"num_heads", m.num_heads},
          {"patch_length", m.patch.patch_length},
          {"patch_stride", m.patch.stride},
          {"num_experts", m.num_experts},
          {"top_k", m.top_k},
          {"ffn_hidden", m.ffn_hidden},
          {"gate_hidden", m.gate_hidden},
          {"decomposition_kernel", m.decomposition_kernel},
          {"atm_placement", placement_name(m.atm_placement)},
          {"atm_residual", m.atm_residual},
          {"timescale_pooling", m.timescale_pooling},
          {"active_experts", m.active_experts}};
}

ExperimentConfig config_from_json(const json& j) {
  Fields f(j, "");
  ExperimentConfig cfg;
  cfg.master_seed = f.get<std::uint64_t>("master_seed", 0);
  cfg.output_dir = f.get<std::string>("output_dir", cfg.output_dir.string());
  cfg.model = read_model(f.has("model") ? f.raw("model") : json::object());

  json clients = json::array();
  for (const char* preset : {"network", "energy", "weather", "natural"}) clients.push_back({{"preset", preset}});
  if (f.has("clients")) clients = f.raw("clients");
  require(clients.is_array(), "clients must be an array");
  for (std::size_t i = 0; i < clients.size(); ++i) {
    Fields c(clients[i], "clients[" + std::to_string(i) + "]");
    ClientSource src;
    if (c.has("path")) {
      src.path = c.get<std::string>("path", "");
    } else {
      src.synthetic = read_synthetic(c, derive_seed(cfg.master_seed, "clients", {i}));
    }
    c.finish();
    cfg.clients.push_back(std::move(src));
  }

  cfg.fed = read_fed(f.has("fed") ? f.raw("fed") : json::object(), static_cast<int>(cfg.clients.size()));
  cfg.fed.seed = cfg.master_seed;

  cfg.downstream = read_downstream(f.has("downstream") ? f.raw("downstream") : json::object(),
                                   cfg.master_seed);
  if (f.has("task_specs")) {
    const auto& tasks = f.raw("task_specs");
    require(tasks.is_array(), "task_specs must be an array");
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      with_prefix("task_specs[" + std::to_string(i) + "]", [&] {
        auto t = tasks[i];
        if (t.is_object() && !t.contains("channels")) t["channels"] = cfg.downstream.client.channels;
        cfg.task_specs.push_back(downstream::task_spec_from_json(t));
      });
    }
  } else {
    const int c = cfg.downstream.client.channels;
    cfg.task_specs = {downstream::TaskSpec::forecast(24, c), downstream::TaskSpec::impute(0.25, c),
                      downstream::TaskSpec::detect(0.99, c)};
  }
  f.finish();
  cfg.validate();
  return cfg;
}

json to_json(const ExperimentConfig& cfg) {
  json clients = json::array();
  for (const auto& c : cfg.clients) {
    clients.push_back(c.path ? json{{"path", c.path->string()}} : synthetic_json(*c.synthetic));
  }
  json tasks = json::array();
  for (const auto& t : cfg.task_specs) tasks.push_back(downstream::to_json(t));
  const auto& f = cfg.fed;
  const auto& ft = cfg.downstream.finetune;
  return {
      {"master_seed", cfg.master_seed},
      {"output_dir", cfg.output_dir.string()},
      {"model", to_json(cfg.model)},
      {"fed",
       {{"num_clients", f.num_clients},
        {"participation_rate", f.participation_rate},
        {"local_epochs", f.local_epochs},
        {"rounds", f.rounds},
        {"lambda", f.lambda},
        {"mean_masked_length", f.mask_spec.mean_masked_length},
        {"mask_ratio", f.mask_spec.mask_ratio},
        {"shared_mask", f.mask_spec.shared_across_channels},
        {"learning_rate", f.learning_rate},
        {"momentum", f.momentum},
        {"grad_clip", f.grad_clip},
        {"batch_size", f.batch_size},
        {"algorithm", f.algorithm == fed::Algorithm::ffts ? "ffts" : "fedavg"},
        {"server_atm_momentum", f.server_atm_momentum},
        {"serialize_roundtrip", f.serialize_roundtrip},
        {"window_stride", f.window_stride},
        {"evaluate_each_round", f.evaluate_each_round}}},
      {"clients", clients},
      {"task_specs", tasks},
      {"downstream",
       {{"client", synthetic_json(cfg.downstream.client)},
        {"finetune",
         {{"epochs", ft.epochs},
          {"learning_rate", ft.learning_rate},
          {"momentum", ft.momentum},
          {"grad_clip", ft.grad_clip},
          {"batch_size", ft.batch_size},
          {"data_fraction", ft.data_fraction},
          {"stride", ft.stride},
          {"seed", ft.seed}}},
        {"anomalies",
         {{"count", cfg.downstream.anomalies.count},
          {"width", cfg.downstream.anomalies.width},
          {"amplitude_sigma", cfg.downstream.anomalies.amplitude_sigma}}},
        {"eval_stride", cfg.downstream.eval_stride}}},
  };
}

ExperimentConfig parse_config(std::string_view text, const std::string& source) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    // Report line and column of the failing byte.
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw UsageError(source + ":" + std::to_string(line) + ":" + std::to_string(col) +
                     ": invalid JSON: " + e.what());
  }
  return config_from_json(j);
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), "cannot open config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string());
}

std::string config_hash(const ExperimentConfig& cfg) {
  json j = to_json(cfg);
  j.erase("output_dir");
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(j.dump())));
  return buf;
}

}  // namespace ffts::harness
