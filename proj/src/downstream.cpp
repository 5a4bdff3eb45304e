#include "ffts/downstream.hpp"

#include "ffts/metrics.hpp"
#include "ffts/optim.hpp"
#include "ffts/rng.hpp"
#include "layers.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

namespace ffts::downstream {

using model::detail::ffn_backward;
using model::detail::ffn_forward;
using model::detail::layer_norm;
using model::detail::layer_norm_backward;

std::string to_string(Task task) {
  switch (task) {
    case Task::forecast: return "forecast";
    case Task::impute: return "impute";
    case Task::detect: return "detect";
  }
  return "unknown";
}

Task task_from_string(const std::string& name) {
  if (name == "forecast") return Task::forecast;
  if (name == "impute") return Task::impute;
  if (name == "detect") return Task::detect;
  throw UsageError("task: unknown task '" + name + "' (expected forecast, impute or detect)");
}

TaskSpec TaskSpec::forecast(int horizon, int channels, bool freeze_encoder) {
  TaskSpec s;
  s.task = Task::forecast;
  s.horizon = horizon;
  s.channels = channels;
  s.freeze_encoder = freeze_encoder;
  return s;
}

TaskSpec TaskSpec::impute(double mask_ratio, int channels, bool freeze_encoder) {
  TaskSpec s;
  s.task = Task::impute;
  s.mask_ratio = mask_ratio;
  s.channels = channels;
  s.freeze_encoder = freeze_encoder;
  return s;
}

TaskSpec TaskSpec::detect(double anomaly_quantile, int channels, bool freeze_encoder) {
  TaskSpec s;
  s.task = Task::detect;
  s.anomaly_quantile = anomaly_quantile;
  s.channels = channels;
  s.freeze_encoder = freeze_encoder;
  return s;
}

void TaskSpec::validate() const {
  const bool f = task == Task::forecast, i = task == Task::impute, d = task == Task::detect;
  require(horizon.has_value() == f, f ? "task_spec.horizon is required for forecasting"
                                      : "task_spec.horizon is only valid for forecasting");
  require(mask_ratio.has_value() == i, i ? "task_spec.mask_ratio is required for imputation"
                                         : "task_spec.mask_ratio is only valid for imputation");
  require(anomaly_quantile.has_value() == d,
          d ? "task_spec.anomaly_quantile is required for detection"
            : "task_spec.anomaly_quantile is only valid for detection");
  if (f) require(*horizon >= 1, "task_spec.horizon must be positive");
  if (i) require(*mask_ratio > 0.0 && *mask_ratio < 1.0, "task_spec.mask_ratio must lie in (0, 1)");
  if (d) {
    require(*anomaly_quantile > 0.0 && *anomaly_quantile < 1.0,
            "task_spec.anomaly_quantile must lie in (0, 1)");
  }
  require(channels >= 1, "task_spec.channels must be >= 1");
}

int TaskSpec::output_per_channel(const model::ModelConfig& cfg) const {
  return task == Task::forecast ? horizon.value_or(0) : cfg.seq_len;
}

nlohmann::json to_json(const TaskSpec& spec) {
  nlohmann::json j = {{"task", to_string(spec.task)},
                      {"freeze_encoder", spec.freeze_encoder},
                      {"channels", spec.channels}};
  if (spec.horizon) j["horizon"] = *spec.horizon;
  if (spec.mask_ratio) j["mask_ratio"] = *spec.mask_ratio;
  if (spec.anomaly_quantile) j["anomaly_quantile"] = *spec.anomaly_quantile;
  return j;
}

TaskSpec task_spec_from_json(const nlohmann::json& j) {
  require(j.is_object(), "task_spec must be an object");
  for (const auto& [key, _] : j.items()) {
    static const std::vector<std::string> known{"task", "horizon", "mask_ratio", "anomaly_quantile",
                                                "freeze_encoder", "channels"};
    require(std::find(known.begin(), known.end(), key) != known.end(),
            "task_spec: unknown field '" + key + "'");
  }
  require(j.contains("task"), "task_spec.task is required");
  TaskSpec s;
  try {
    s.task = task_from_string(j.at("task").get<std::string>());
    if (j.contains("horizon")) s.horizon = j.at("horizon").get<int>();
    if (j.contains("mask_ratio")) s.mask_ratio = j.at("mask_ratio").get<double>();
    if (j.contains("anomaly_quantile")) s.anomaly_quantile = j.at("anomaly_quantile").get<double>();
    s.freeze_encoder = j.value("freeze_encoder", true);
    s.channels = j.value("channels", 1);
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("task_spec: ") + e.what());
  }
  s.validate();
  return s;
}

namespace {

constexpr double kEps = 1e-5;

void add_head_linear(ParameterSet& p, const std::string& prefix, std::size_t in, std::size_t out,
                     std::uint64_t seed) {
  auto& w = p.add(prefix + ".weight", {in, out});
  Rng rng(derive_seed(seed, prefix + ".weight"));
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  for (double& v : w.data) v = rng.uniform(-bound, bound);
  p.add(prefix + ".bias", {out});
}

bool is_reconstruction_head(const std::string& name) { return name.rfind("head.", 0) == 0; }

/// Window normalized with statistics of its visible points.
struct Normalized {
  data::RevinStats stats;
  Matrix input;
};

Normalized normalize_visible(const Matrix& values, const data::MaskMatrix* mask) {
  const auto T = values.rows(), C = values.cols();
  Normalized n;
  n.stats.epsilon = kEps;
  n.stats.mean = Vector::Zero(C);
  n.stats.std = Vector::Zero(C);
  n.input = Matrix::Zero(T, C);
  for (Eigen::Index c = 0; c < C; ++c) {
    double sum = 0.0, count = 0.0;
    for (Eigen::Index t = 0; t < T; ++t) {
      if (mask != nullptr && mask->is_masked(t, c)) continue;
      sum += values(t, c);
      count += 1.0;
    }
    if (count == 0.0) {
      n.stats.std(c) = 1.0 - kEps;
      continue;
    }
    const double mean = sum / count;
    double sq = 0.0;
    for (Eigen::Index t = 0; t < T; ++t) {
      if (mask != nullptr && mask->is_masked(t, c)) continue;
      sq += (values(t, c) - mean) * (values(t, c) - mean);
    }
    n.stats.mean(c) = mean;
    n.stats.std(c) = std::sqrt(sq / count);
    const double den = n.stats.std(c) + kEps;
    for (Eigen::Index t = 0; t < T; ++t) {
      if (mask != nullptr && mask->is_masked(t, c)) continue;
      n.input(t, c) = (values(t, c) - mean) / den;
    }
  }
  return n;
}

Matrix normalize_with(const Matrix& values, const data::RevinStats& stats) {
  Matrix out(values.rows(), values.cols());
  for (Eigen::Index c = 0; c < values.cols(); ++c) {
    out.col(c) = (values.col(c).array() - stats.mean(c)) / (stats.std(c) + stats.epsilon);
  }
  return out;
}

struct Features {
  Matrix flat;  // C x (P * d)
  std::vector<model::EncoderTrace> traces;
};

Features encode_channels(const Matrix& input, const ParameterSet& params,
                         const model::ModelConfig& cfg, bool keep_traces) {
  const auto P = cfg.num_patches();
  const auto d = cfg.d_model;
  Features f;
  f.flat.resize(input.cols(), static_cast<Eigen::Index>(P) * d);
  for (Eigen::Index c = 0; c < input.cols(); ++c) {
    auto trace = model::encode(input.col(c), params, cfg);
    const Matrix& rep = trace.representation();
    f.flat.row(c) = Eigen::Map<const RowVector>(rep.data(), rep.size());
    if (keep_traces) f.traces.push_back(std::move(trace));
  }
  return f;
}

struct HeadTrace {
  model::LayerNormCache ln;
  Matrix ln_out;
  model::FfnTrace mlp;
};

HeadTrace head_forward(const Matrix& flat, const ParameterSet& params) {
  HeadTrace h;
  h.ln_out = layer_norm(flat, params, "adapt.ln", h.ln);
  h.mlp = ffn_forward(h.ln_out, params, "adapt.mlp");
  return h;
}

/// Accumulates head (and optionally encoder) gradients for d(loss)/d(output).
void head_backward(const Features& f, const HeadTrace& h, const Matrix& d_out,
                   const ParameterSet& params, const model::ModelConfig& cfg, bool train_encoder,
                   ParameterSet& grads) {
  const Matrix d_ln = ffn_backward(h.ln_out, h.mlp, d_out, params, "adapt.mlp", &grads);
  const Matrix d_flat = layer_norm_backward(d_ln, h.ln, params, "adapt.ln", &grads);
  if (!train_encoder) return;
  const auto P = cfg.num_patches();
  for (Eigen::Index c = 0; c < d_flat.rows(); ++c) {
    Matrix d_rep = Eigen::Map<const Matrix>(d_flat.row(c).data(), P, cfg.d_model);
    model::encode_backward(f.traces[static_cast<std::size_t>(c)], d_rep, params, cfg, grads);
  }
}

ParameterSet combined(const AdaptedModel& m) {
  ParameterSet all = m.encoder;
  for (const auto& e : m.head.entries()) all.add(e.name, e.tensor, e.atm);
  return all;
}

void split_into(const ParameterSet& all, AdaptedModel& m) {
  for (auto& e : m.encoder.entries()) e.tensor = all.at(e.name);
  for (auto& e : m.head.entries()) e.tensor = all.at(e.name);
}

void require_window(const AdaptedModel& m, const data::TimeSeries& window) {
  require(window.length() == m.config.seq_len,
          "window length " + std::to_string(window.length()) + " does not match model.seq_len " +
              std::to_string(m.config.seq_len));
  require(window.channels() == m.spec.channels,
          "window has " + std::to_string(window.channels()) + " channels, task expects " +
              std::to_string(m.spec.channels));
}

struct Sample {
  Normalized norm;
  Matrix target;     // normalized, out x C
  Matrix loss_mask;  // 1 where the loss counts
  double count = 0.0;
  Features cached;
};

Sample prepare_sample(const AdaptedModel& model, const data::TimeSeries& window,
                      std::uint64_t mask_seed) {
  const int T = model.config.seq_len;
  const int H = model.spec.task == Task::forecast ? *model.spec.horizon : 0;
  require(window.length() == T + H, "task window must have " + std::to_string(T + H) + " steps, got " +
                                        std::to_string(window.length()));
  require(window.channels() == model.spec.channels,
          "task window has " + std::to_string(window.channels()) + " channels, task expects " +
              std::to_string(model.spec.channels));
  const Matrix& v = window.values;
  Sample s;
  if (model.spec.task == Task::forecast) {
    s.norm = normalize_visible(v.topRows(T), nullptr);
    s.target = normalize_with(v.bottomRows(H), s.norm.stats);
    s.loss_mask = Matrix::Ones(H, v.cols());
  } else if (model.spec.task == Task::impute) {
    const auto mask = uniform_mask(T, static_cast<int>(v.cols()), *model.spec.mask_ratio, mask_seed);
    s.norm = normalize_visible(v, &mask);
    s.target = normalize_with(v, s.norm.stats);
    s.loss_mask = Matrix::Ones(T, v.cols()) - mask.mask;
  } else {
    s.norm = normalize_visible(v, nullptr);
    s.target = s.norm.input;
    s.loss_mask = Matrix::Ones(T, v.cols());
  }
  s.count = s.loss_mask.sum();
  if (s.count == 0.0) throw RuntimeError("empty objective: no masked points");
  return s;
}

}  // namespace

AdaptedModel attach_head(const ParameterSet& pretrained, const model::ModelConfig& cfg,
                         const TaskSpec& spec, std::uint64_t seed) {
  cfg.validate();
  spec.validate();
  AdaptedModel m;
  m.config = cfg;
  m.spec = spec;
  const ParameterSet reference = model::init_params(cfg, 0);
  for (const auto& e : reference.entries()) {
    if (is_reconstruction_head(e.name)) continue;
    require(pretrained.contains(e.name), "attach_head: pretrained parameters lack '" + e.name + "'");
    const auto& t = pretrained.at(e.name);
    require(t.shape == e.tensor.shape, "attach_head: tensor '" + e.name + "' has shape " +
                                           shape_string(t.shape) + ", expected " +
                                           shape_string(e.tensor.shape));
    m.encoder.add(e.name, t, e.atm);
  }
  const auto in = static_cast<std::size_t>(cfg.num_patches()) * static_cast<std::size_t>(cfg.d_model);
  const auto hidden = 2 * static_cast<std::size_t>(cfg.d_model);
  const auto out = static_cast<std::size_t>(spec.output_per_channel(cfg));
  auto& gamma = m.head.add("adapt.ln.gamma", {in});
  std::fill(gamma.data.begin(), gamma.data.end(), 1.0);
  m.head.add("adapt.ln.beta", {in});
  add_head_linear(m.head, "adapt.mlp.fc1", in, hidden, seed);
  add_head_linear(m.head, "adapt.mlp.fc2", hidden, out, seed);
  return m;
}

Matrix predict(const AdaptedModel& model, const data::TimeSeries& window,
               const data::MaskMatrix* mask) {
  require_window(model, window);
  const auto norm = normalize_visible(window.values, mask);
  const auto all = combined(model);
  const auto f = encode_channels(norm.input, all, model.config, false);
  const auto h = head_forward(f.flat, all);
  const Matrix out_norm = h.mlp.output.transpose();
  return data::revin_denormalize(out_norm, norm.stats);
}

TaskLoss task_loss(const AdaptedModel& model, const data::TimeSeries& window,
                   std::uint64_t mask_seed) {
  const auto s = prepare_sample(model, window, mask_seed);
  const ParameterSet params = combined(model);
  const bool train_encoder = !model.spec.freeze_encoder;
  const auto f = encode_channels(s.norm.input, params, model.config, train_encoder);
  const auto h = head_forward(f.flat, params);
  const Matrix diff = (h.mlp.output.transpose() - s.target).cwiseProduct(s.loss_mask);
  TaskLoss out;
  out.loss = diff.squaredNorm() / s.count;
  out.gradients = params.zeros_like();
  head_backward(f, h, (2.0 / s.count) * diff.transpose(), params, model.config, train_encoder,
                out.gradients);
  return out;
}

FinetuneResult finetune(AdaptedModel model, const data::TimeSeries& train,
                        const FinetuneOptions& options) {
  require(options.epochs >= 0, "finetune: epochs must be >= 0");
  require(options.learning_rate >= 0.0, "finetune: learning_rate must be >= 0");
  require(options.batch_size >= 1, "finetune: batch_size must be >= 1");
  require(options.data_fraction > 0.0 && options.data_fraction <= 1.0,
          "finetune: data_fraction must lie in (0, 1]");
  require(train.channels() == model.spec.channels,
          "finetune: series has " + std::to_string(train.channels()) + " channels, task expects " +
              std::to_string(model.spec.channels));
  const auto& cfg = model.config;
  const auto& spec = model.spec;
  const int T = cfg.seq_len;
  const int H = spec.task == Task::forecast ? *spec.horizon : 0;
  const int stride = options.stride > 0 ? options.stride
                                        : (spec.task == Task::forecast ? H : std::max(1, T / 4));
  auto windows = data::make_windows(train, T + H, stride);
  require(!windows.empty(), "finetune: series of length " + std::to_string(train.length()) +
                                " is shorter than one training window (" + std::to_string(T + H) + ")");
  const auto n = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::ceil(options.data_fraction * static_cast<double>(windows.size()))));
  windows.resize(std::min(n, windows.size()));

  std::vector<Sample> samples;
  samples.reserve(windows.size());
  for (std::size_t i = 0; i < windows.size(); ++i) {
    samples.push_back(prepare_sample(model, windows[i], derive_seed(options.seed, "finetune.impute", {i})));
  }

  ParameterSet params = combined(model);
  const bool train_encoder = !spec.freeze_encoder;
  if (!train_encoder) {
    for (auto& s : samples) s.cached = encode_channels(s.norm.input, params, cfg, false);
  }
  std::unordered_set<std::string> frozen;
  if (!train_encoder) {
    for (const auto& e : model.encoder.entries()) frozen.insert(e.name);
  }
  Sgd opt({options.learning_rate, options.momentum, options.grad_clip});

  FinetuneResult result;
  result.num_samples = samples.size();
  std::vector<std::size_t> order(samples.size());
  std::vector<double> losses(samples.size());
  const auto bs = static_cast<std::size_t>(options.batch_size);
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(options.seed, "finetune.order", {static_cast<std::uint64_t>(epoch)}));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t end = std::min(order.size(), start + bs);
      ParameterSet grads = params.zeros_like();
      const double scale = 1.0 / static_cast<double>(end - start);
      for (std::size_t b = start; b < end; ++b) {
        const auto& s = samples[order[b]];
        Features live;
        if (train_encoder) live = encode_channels(s.norm.input, params, cfg, true);
        const Features& f = train_encoder ? live : s.cached;
        const auto h = head_forward(f.flat, params);
        const Matrix diff = (h.mlp.output.transpose() - s.target).cwiseProduct(s.loss_mask);
        losses[order[b]] = diff.squaredNorm() / s.count;
        const Matrix d_out = (2.0 * scale / s.count) * diff.transpose();
        head_backward(f, h, d_out, params, cfg, train_encoder, grads);
      }
      opt.step(params, grads, &frozen);
    }
    double total = 0.0;
    for (double l : losses) total += l;
    result.loss_trace.push_back(total / static_cast<double>(losses.size()));
  }
  split_into(params, model);
  result.model = std::move(model);
  return result;
}

nlohmann::json EvalReport::to_json() const {
  return {{"task", task}, {"dataset", dataset}, {"config_hash", config_hash},
          {"metrics", metrics}, {"flags", flags}};
}

namespace {

void finalize(EvalReport& r) {
  for (const auto& [name, value] : r.metrics) {
    if (!std::isfinite(value)) throw RuntimeError("metric '" + name + "' is not finite");
  }
}

std::string describe(const data::TimeSeries& s) {
  return (s.domain_tag.empty() ? std::string("series") : s.domain_tag) + " L=" +
         std::to_string(s.length()) + " C=" + std::to_string(s.channels()) +
         " dt=" + std::to_string(s.resolution_seconds) + "s";
}

data::TimeSeries slice(const data::TimeSeries& s, Eigen::Index start, Eigen::Index length) {
  data::TimeSeries w;
  w.values = s.values.middleRows(start, length);
  w.resolution_seconds = s.resolution_seconds;
  w.domain_tag = s.domain_tag;
  return w;
}

}  // namespace

Forecaster forecaster(const AdaptedModel& model) {
  require(model.spec.task == Task::forecast, "forecaster: model head is not a forecasting head");
  return [model](const data::TimeSeries& lookback) { return predict(model, lookback); };
}

Imputer imputer(const AdaptedModel& model) {
  require(model.spec.task == Task::impute, "imputer: model head is not an imputation head");
  return [model](const data::TimeSeries& window, const data::MaskMatrix& mask) {
    return predict(model, window, &mask);
  };
}

Reconstructor reconstructor(const AdaptedModel& model) {
  require(model.spec.task == Task::detect, "reconstructor: model head is not a detection head");
  return [model](const data::TimeSeries& window) { return predict(model, window); };
}

Imputer pretrained_imputer(const ParameterSet& params, const model::ModelConfig& cfg) {
  return [params, cfg](const data::TimeSeries& window, const data::MaskMatrix& mask) {
    // Missing values are replaced by the visible channel mean before the
    // window statistics are taken.
    const auto norm = normalize_visible(window.values, &mask);
    data::TimeSeries filled = window;
    for (Eigen::Index c = 0; c < filled.channels(); ++c) {
      for (Eigen::Index t = 0; t < filled.length(); ++t) {
        if (mask.is_masked(t, c)) filled.values(t, c) = norm.stats.mean(c);
      }
    }
    return model::forward(filled, mask, params, cfg).reconstruction;
  };
}

Reconstructor pretrained_reconstructor(const ParameterSet& params, const model::ModelConfig& cfg) {
  return [params, cfg](const data::TimeSeries& window) {
    const data::MaskMatrix visible{Matrix::Ones(window.length(), window.channels())};
    return model::forward(window, visible, params, cfg).reconstruction;
  };
}

Imputer linear_interpolation_imputer() {
  return [](const data::TimeSeries& window, const data::MaskMatrix& mask) {
    const auto T = window.length();
    Matrix out = window.values;
    for (Eigen::Index c = 0; c < window.channels(); ++c) {
      std::vector<Eigen::Index> visible;
      for (Eigen::Index t = 0; t < T; ++t) {
        if (!mask.is_masked(t, c)) visible.push_back(t);
      }
      if (visible.empty()) {
        out.col(c).setZero();
        continue;
      }
      std::size_t next = 0;
      for (Eigen::Index t = 0; t < T; ++t) {
        while (next < visible.size() && visible[next] < t) ++next;
        if (!mask.is_masked(t, c)) continue;
        if (next == 0) {
          out(t, c) = window.values(visible.front(), c);
        } else if (next == visible.size()) {
          out(t, c) = window.values(visible.back(), c);
        } else {
          const auto a = visible[next - 1], b = visible[next];
          const double w = static_cast<double>(t - a) / static_cast<double>(b - a);
          out(t, c) = (1.0 - w) * window.values(a, c) + w * window.values(b, c);
        }
      }
    }
    return out;
  };
}

Imputer zero_imputer() {
  return [](const data::TimeSeries& window, const data::MaskMatrix&) {
    return Matrix::Zero(window.length(), window.channels()).eval();
  };
}

EvalReport evaluate_forecast(const Forecaster& model, const data::TimeSeries& series,
                             const ForecastEvalOptions& options) {
  require(options.seq_len >= 1 && options.horizon >= 1 && options.stride >= 1,
          "evaluate_forecast: seq_len, horizon and stride must be positive");
  const Eigen::Index need = options.seq_len + options.horizon;
  require(series.length() >= need, "evaluate_forecast: series of length " +
                                       std::to_string(series.length()) + " is too short (need " +
                                       std::to_string(need) + ")");
  const auto scaler = options.scaler.value_or(data::Scaler::identity(series.channels()));
  double sq = 0.0, abs = 0.0, sm = 0.0, count = 0.0;
  std::size_t windows = 0;
  for (Eigen::Index start = 0; start + need <= series.length(); start += options.stride) {
    const auto lookback = slice(series, start, options.seq_len);
    const Matrix pred = model(lookback);
    const Matrix target = series.values.middleRows(start + options.seq_len, options.horizon);
    require(pred.rows() == target.rows() && pred.cols() == target.cols(),
            "evaluate_forecast: forecaster returned the wrong shape");
    const Matrix diff = scaler.transform(pred) - scaler.transform(target);
    const auto n = static_cast<double>(diff.size());
    sq += diff.array().square().sum();
    abs += diff.array().abs().sum();
    if (options.short_term) sm += metrics::smape(pred, target) * n;
    count += n;
    ++windows;
  }
  EvalReport r;
  r.task = "forecast";
  r.dataset = describe(series);
  r.metrics["mse"] = sq / count;
  r.metrics["mae"] = abs / count;
  if (options.short_term) r.metrics["smape"] = sm / count;
  r.metrics["horizon"] = options.horizon;
  r.metrics["windows"] = static_cast<double>(windows);
  finalize(r);
  return r;
}

EvalReport evaluate_forecast(const AdaptedModel& model, const data::TimeSeries& series, int stride,
                             std::optional<data::Scaler> scaler) {
  ForecastEvalOptions o;
  o.seq_len = model.config.seq_len;
  o.horizon = model.spec.horizon.value_or(0);
  o.stride = stride;
  o.scaler = std::move(scaler);
  return evaluate_forecast(forecaster(model), series, o);
}

data::MaskMatrix uniform_mask(int length, int channels, double ratio, std::uint64_t seed) {
  require(length >= 1 && channels >= 1, "uniform_mask: empty shape");
  require(ratio >= 0.0 && ratio < 1.0, "uniform_mask: ratio must lie in [0, 1)");
  const auto total = static_cast<std::size_t>(length) * static_cast<std::size_t>(channels);
  const auto count = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(total)));
  std::vector<std::size_t> idx(total);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = 0; i < count; ++i) std::swap(idx[i], idx[i + rng.below(total - i)]);
  data::MaskMatrix m{Matrix::Ones(length, channels)};
  for (std::size_t i = 0; i < count; ++i) m.mask.data()[idx[i]] = 0.0;
  return m;
}

EvalReport evaluate_impute(const Imputer& model, const data::TimeSeries& series,
                           const ImputeEvalOptions& options) {
  require(series.length() >= options.seq_len,
          "evaluate_impute: series is shorter than one window of " + std::to_string(options.seq_len));
  const auto scaler = options.scaler.value_or(data::Scaler::identity(series.channels()));
  const auto windows = data::make_windows(series, options.seq_len, options.seq_len);
  double sq = 0.0, abs = 0.0, count = 0.0;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const auto mask = uniform_mask(options.seq_len, static_cast<int>(series.channels()),
                                   options.mask_ratio, derive_seed(options.seed, "impute.eval", {i}));
    if (mask.masked_count() == 0) throw RuntimeError("empty objective: no masked points");
    const Matrix pred = model(data::apply_mask(windows[i], mask), mask);
    require(pred.rows() == options.seq_len && pred.cols() == series.channels(),
            "evaluate_impute: imputer returned the wrong shape");
    const Matrix diff = scaler.transform(pred) - scaler.transform(windows[i].values);
    const Matrix missing = Matrix::Ones(mask.mask.rows(), mask.mask.cols()) - mask.mask;
    sq += diff.array().square().cwiseProduct(missing.array()).sum();
    abs += diff.array().abs().cwiseProduct(missing.array()).sum();
    count += static_cast<double>(mask.masked_count());
  }
  EvalReport r;
  r.task = "impute";
  r.dataset = describe(series);
  r.metrics["mse"] = sq / count;
  r.metrics["mae"] = abs / count;
  r.metrics["mask_ratio"] = options.mask_ratio;
  finalize(r);
  return r;
}

std::vector<double> anomaly_scores(const Reconstructor& model, const data::TimeSeries& series,
                                   int seq_len) {
  require(seq_len >= 1 && series.length() >= seq_len,
          "anomaly_scores: series is shorter than one window of " + std::to_string(seq_len));
  const auto L = series.length();
  std::vector<double> scores(static_cast<std::size_t>(L), 0.0);
  Eigen::Index covered = 0;
  while (covered < L) {
    const Eigen::Index start = std::min<Eigen::Index>(covered, L - seq_len);
    const auto window = slice(series, start, seq_len);
    const Matrix rec = model(window);
    require(rec.rows() == seq_len && rec.cols() == series.channels(),
            "anomaly_scores: reconstructor returned the wrong shape");
    const Vector err = (rec - window.values).array().square().rowwise().mean();
    for (Eigen::Index t = covered; t < start + seq_len; ++t) {
      scores[static_cast<std::size_t>(t)] = err(t - start);
    }
    covered = start + seq_len;
  }
  return scores;
}

EvalReport detect_with_threshold(const std::vector<double>& test_scores,
                                 const std::vector<bool>& labels, double threshold,
                                 bool point_adjust) {
  require(test_scores.size() == labels.size(), "detect: labels and scores differ in length (" +
                                                   std::to_string(labels.size()) + " vs " +
                                                   std::to_string(test_scores.size()) + ")");
  std::vector<bool> predicted(test_scores.size());
  for (std::size_t i = 0; i < test_scores.size(); ++i) predicted[i] = test_scores[i] > threshold;
  if (point_adjust) predicted = metrics::point_adjust(predicted, labels);
  const auto c = metrics::classify(predicted, labels);
  EvalReport r;
  r.task = "detect";
  r.metrics["precision"] = c.precision;
  r.metrics["recall"] = c.recall;
  r.metrics["f1"] = c.f1;
  r.metrics["threshold"] = threshold;
  r.metrics["point_adjust"] = point_adjust ? 1.0 : 0.0;
  const auto positives = std::count(labels.begin(), labels.end(), true);
  if (positives == 0) r.flags.push_back("labels_all_normal");
  if (positives == static_cast<std::ptrdiff_t>(labels.size())) r.flags.push_back("labels_all_anomalous");
  if (c.undefined) r.flags.push_back("f1_undefined");
  finalize(r);
  return r;
}

EvalReport detect_anomalies(const std::vector<double>& train_scores,
                            const std::vector<double>& test_scores, const std::vector<bool>& labels,
                            double quantile, bool point_adjust) {
  require(quantile > 0.0 && quantile < 1.0, "detect: quantile must lie in (0, 1)");
  std::vector<double> combined = train_scores;
  combined.insert(combined.end(), test_scores.begin(), test_scores.end());
  auto r = detect_with_threshold(test_scores, labels, metrics::quantile(combined, quantile),
                                 point_adjust);
  r.metrics["quantile"] = quantile;
  return r;
}

EvalReport evaluate_anomaly(const Reconstructor& model, const data::TimeSeries& train_series,
                            const data::TimeSeries& test_series, const std::vector<bool>& labels,
                            int seq_len, double quantile, bool point_adjust) {
  require(labels.size() == static_cast<std::size_t>(test_series.length()),
          "evaluate_anomaly: labels must have the test series length");
  auto r = detect_anomalies(anomaly_scores(model, train_series, seq_len),
                            anomaly_scores(model, test_series, seq_len), labels, quantile,
                            point_adjust);
  r.dataset = describe(test_series);
  return r;
}

}  // namespace ffts::downstream
