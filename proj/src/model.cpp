#include "ffts/model.hpp"

#include "ffts/rng.hpp"
#include "layers.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace ffts::model {

using detail::ffn_backward;
using detail::ffn_forward;
using detail::layer_norm;
using detail::layer_norm_backward;
using detail::linear;
using detail::linear_backward;

void ModelConfig::validate() const {
  require(d_model >= 1, "model.d_model must be positive");
  require(num_layers >= 1, "model.num_layers must be positive");
  require(num_heads >= 1, "model.num_heads must be positive");
  require(d_model % num_heads == 0, "model.num_heads (" + std::to_string(num_heads) +
                                        ") must divide model.d_model (" +
                                        std::to_string(d_model) + ")");
  patch.validate();
  require(seq_len >= patch.patch_length, "model.seq_len (" + std::to_string(seq_len) +
                                             ") must be >= model.patch.patch_length (" +
                                             std::to_string(patch.patch_length) + ")");
  require(num_experts >= 1, "model.num_experts must be positive");
  require(top_k >= 1 && top_k <= num_experts,
          "model.top_k (" + std::to_string(top_k) + ") must lie in [1, model.num_experts (" +
              std::to_string(num_experts) + ")]");
  require(ffn_hidden >= 1, "model.ffn_hidden must be positive");
  require(gate_hidden >= 0, "model.gate_hidden must be nonnegative");
  require(decomposition_kernel >= 1 && decomposition_kernel % 2 == 1,
          "model.decomposition_kernel must be an odd positive integer");
  std::set<int> seen;
  for (int e : active_experts) {
    require(e >= 0 && e < num_experts,
            "model.active_experts entry " + std::to_string(e) + " out of range");
    require(seen.insert(e).second, "model.active_experts contains duplicates");
  }
  if (!active_experts.empty()) {
    require(top_k <= static_cast<int>(active_experts.size()),
            "model.top_k (" + std::to_string(top_k) + ") exceeds the number of " +
                "model.active_experts (" + std::to_string(active_experts.size()) + ")");
  }
}

int ModelConfig::gate_width() const {
  return gate_hidden > 0 ? gate_hidden : std::max(1, d_model / 2);
}

bool ModelConfig::block_has_atm(int block) const {
  return atm_placement == AtmPlacement::every_block || block == num_layers - 1;
}

std::vector<bool> ModelConfig::active_mask() const {
  std::vector<bool> mask(num_experts, active_experts.empty());
  for (int e : active_experts) mask[e] = true;
  return mask;
}

std::string block_prefix(int block) { return "block" + std::to_string(block); }

namespace {

void fill_uniform(Tensor& t, std::size_t fan_in, std::uint64_t seed) {
  Rng rng(seed);
  const double a = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (double& v : t.data) v = rng.uniform(-a, a);
}

void add_linear(ParameterSet& p, const std::string& prefix, std::size_t in, std::size_t out,
                bool atm, std::uint64_t seed) {
  auto& w = p.add(prefix + ".weight", {in, out}, atm);
  fill_uniform(w, in, derive_seed(seed, prefix + ".weight"));
  p.add(prefix + ".bias", {out}, atm);
}

void add_layer_norm(ParameterSet& p, const std::string& prefix, std::size_t d) {
  auto& g = p.add(prefix + ".gamma", {d});
  std::fill(g.data.begin(), g.data.end(), 1.0);
  p.add(prefix + ".beta", {d});
}

Matrix moving_average(const Matrix& x, int kernel) {
  const Eigen::Index P = x.rows();
  const int half = kernel / 2;
  Matrix out = Matrix::Zero(P, x.cols());
  for (Eigen::Index p = 0; p < P; ++p) {
    for (int j = -half; j <= half; ++j) {
      const Eigen::Index src = std::clamp<Eigen::Index>(p + j, 0, P - 1);
      out.row(p) += x.row(src);
    }
  }
  return out / static_cast<double>(kernel);
}

Matrix moving_average_backward(const Matrix& dy, int kernel) {
  const Eigen::Index P = dy.rows();
  const int half = kernel / 2;
  Matrix dx = Matrix::Zero(P, dy.cols());
  for (Eigen::Index p = 0; p < P; ++p) {
    for (int j = -half; j <= half; ++j) {
      const Eigen::Index dst = std::clamp<Eigen::Index>(p + j, 0, P - 1);
      dx.row(dst) += dy.row(p);
    }
  }
  return dx / static_cast<double>(kernel);
}

// Average-pool the patch axis in groups of `factor`, then repeat back.
Matrix pool_upsample(const Matrix& x, int factor) {
  if (factor <= 1) return x;
  const Eigen::Index P = x.rows();
  Matrix out(P, x.cols());
  for (Eigen::Index g = 0; g < P; g += factor) {
    const Eigen::Index n = std::min<Eigen::Index>(factor, P - g);
    const RowVector mean = x.middleRows(g, n).colwise().mean();
    for (Eigen::Index r = 0; r < n; ++r) out.row(g + r) = mean;
  }
  return out;
}

// The operator is symmetric, so its adjoint is itself.
Matrix pool_upsample_backward(const Matrix& dy, int factor) { return pool_upsample(dy, factor); }

int expert_pool_factor(const ModelConfig& cfg, int expert) {
  return cfg.timescale_pooling ? (1 << std::min(expert, 20)) : 1;
}

std::string expert_prefix(const std::string& atm, int expert) {
  return atm + ".expert" + std::to_string(expert);
}

GateOutput make_gate(Vector logits, const ModelConfig& cfg) {
  const auto active = cfg.active_mask();
  GateOutput g;
  g.logits = std::move(logits);
  g.weights = Vector::Zero(cfg.num_experts);
  double mx = -std::numeric_limits<double>::infinity();
  for (int e = 0; e < cfg.num_experts; ++e) {
    if (active[e]) mx = std::max(mx, g.logits(e));
  }
  double sum = 0.0;
  for (int e = 0; e < cfg.num_experts; ++e) {
    if (!active[e]) continue;
    g.weights(e) = std::exp(g.logits(e) - mx);
    sum += g.weights(e);
  }
  g.weights /= sum;
  g.selected = select_top_k(g.logits, active, cfg.top_k);
  g.renormalized_weights.resize(static_cast<Eigen::Index>(g.selected.size()));
  double kept = 0.0;
  for (int e : g.selected) kept += g.weights(e);
  for (std::size_t s = 0; s < g.selected.size(); ++s) {
    g.renormalized_weights(static_cast<Eigen::Index>(s)) = g.weights(g.selected[s]) / kept;
  }
  return g;
}

void gate_forward(const Matrix& x, const ParameterSet& params, const ModelConfig& cfg,
                  const std::string& atm, AtmTrace& t) {
  const double wt = params.at(atm + ".gate.trend_weight").data[0];
  const double ws = params.at(atm + ".gate.seasonal_weight").data[0];
  t.trend = moving_average(x, cfg.decomposition_kernel);
  t.seasonal = x - t.trend;
  t.mid = wt * t.trend + ws * t.seasonal;
  t.gate_ffn = ffn_forward(t.mid, params, atm + ".gate");
  t.gate = make_gate(t.gate_ffn.output.colwise().mean().transpose(), cfg);
}

void experts_forward(const Matrix& x, const ParameterSet& params, const ModelConfig& cfg,
                     const std::string& atm, AtmTrace& t) {
  t.expert_inputs.clear();
  t.expert_outputs.clear();
  t.mix = Matrix::Zero(x.rows(), x.cols());
  for (std::size_t s = 0; s < t.gate.selected.size(); ++s) {
    const int e = t.gate.selected[s];
    Matrix out;
    if (cfg.timescale_pooling) {
      t.expert_inputs.push_back(pool_upsample(x, expert_pool_factor(cfg, e)));
      out = linear(t.expert_inputs.back(), params, expert_prefix(atm, e));
    } else {
      out = linear(x, params, expert_prefix(atm, e));
    }
    t.mix += t.gate.renormalized_weights(static_cast<Eigen::Index>(s)) * out;
    t.expert_outputs.push_back(std::move(out));
  }
  t.fusion = ffn_forward(t.mix, params, atm + ".fusion");
}

Matrix atm_backward(const Matrix& x, const AtmTrace& t, const Matrix& d_out,
                    const ParameterSet& params, const ModelConfig& cfg, const std::string& atm,
                    ParameterSet& grads) {
  const Matrix d_mix = ffn_backward(t.mix, t.fusion, d_out, params, atm + ".fusion", &grads);
  const auto& gate = t.gate;
  const auto k = static_cast<Eigen::Index>(gate.selected.size());

  Matrix dx = Matrix::Zero(x.rows(), x.cols());
  Vector d_renorm(k);
  for (Eigen::Index s = 0; s < k; ++s) {
    const int e = gate.selected[static_cast<std::size_t>(s)];
    const auto& out = t.expert_outputs[static_cast<std::size_t>(s)];
    d_renorm(s) = d_mix.cwiseProduct(out).sum();
    const Matrix d_expert = gate.renormalized_weights(s) * d_mix;
    Matrix d_in;
    if (cfg.timescale_pooling) {
      linear_backward(t.expert_inputs[static_cast<std::size_t>(s)], d_expert, params,
                      expert_prefix(atm, e), &grads, &d_in);
      dx += pool_upsample_backward(d_in, expert_pool_factor(cfg, e));
    } else {
      linear_backward(x, d_expert, params, expert_prefix(atm, e), &grads, &d_in);
      dx += d_in;
    }
  }

  // renormalized r_s = w_s / sum_sel w  ->  softmax weights  ->  logits
  double kept = 0.0;
  for (int e : gate.selected) kept += gate.weights(e);
  const double r_dot = d_renorm.dot(gate.renormalized_weights);
  Vector d_weights = Vector::Zero(cfg.num_experts);
  for (Eigen::Index s = 0; s < k; ++s) {
    d_weights(gate.selected[static_cast<std::size_t>(s)]) = (d_renorm(s) - r_dot) / kept;
  }
  const double w_dot = d_weights.dot(gate.weights);
  const Vector d_logits = gate.weights.cwiseProduct((d_weights.array() - w_dot).matrix());

  const auto P = static_cast<double>(x.rows());
  Matrix d_gate_out(x.rows(), cfg.num_experts);
  d_gate_out.rowwise() = d_logits.transpose() / P;
  const Matrix d_mid = ffn_backward(t.mid, t.gate_ffn, d_gate_out, params, atm + ".gate", &grads);

  const double wt = params.at(atm + ".gate.trend_weight").data[0];
  const double ws = params.at(atm + ".gate.seasonal_weight").data[0];
  grads.at(atm + ".gate.trend_weight").data[0] += d_mid.cwiseProduct(t.trend).sum();
  grads.at(atm + ".gate.seasonal_weight").data[0] += d_mid.cwiseProduct(t.seasonal).sum();
  dx += ws * d_mid + (wt - ws) * moving_average_backward(d_mid, cfg.decomposition_kernel);
  return dx;
}

void attention_forward(const Matrix& x, const ParameterSet& params, const ModelConfig& cfg,
                       const std::string& prefix, AttentionTrace& t) {
  t.q = linear(x, params, prefix + ".q");
  t.k = linear(x, params, prefix + ".k");
  t.v = linear(x, params, prefix + ".v");
  const int dh = cfg.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  t.probs.assign(static_cast<std::size_t>(cfg.num_heads), Matrix{});
  t.context.resize(x.rows(), x.cols());
  for (int h = 0; h < cfg.num_heads; ++h) {
    Matrix scores = t.q.middleCols(h * dh, dh) * t.k.middleCols(h * dh, dh).transpose() * scale;
    detail::softmax_rows(scores);
    t.context.middleCols(h * dh, dh).noalias() = scores * t.v.middleCols(h * dh, dh);
    t.probs[static_cast<std::size_t>(h)] = std::move(scores);
  }
  t.output = linear(t.context, params, prefix + ".o");
}

Matrix attention_backward(const Matrix& x, const AttentionTrace& t, const Matrix& d_out,
                          const ParameterSet& params, const ModelConfig& cfg,
                          const std::string& prefix, ParameterSet& grads) {
  Matrix d_context;
  linear_backward(t.context, d_out, params, prefix + ".o", &grads, &d_context);
  const int dh = cfg.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Matrix dq(x.rows(), x.cols()), dk(x.rows(), x.cols()), dv(x.rows(), x.cols());
  for (int h = 0; h < cfg.num_heads; ++h) {
    const Matrix& probs = t.probs[static_cast<std::size_t>(h)];
    const Matrix dc = d_context.middleCols(h * dh, dh);
    const Matrix d_probs = dc * t.v.middleCols(h * dh, dh).transpose();
    dv.middleCols(h * dh, dh).noalias() = probs.transpose() * dc;
    Matrix d_scores = probs.cwiseProduct(
        (d_probs.colwise() - d_probs.cwiseProduct(probs).rowwise().sum()));
    d_scores *= scale;
    dq.middleCols(h * dh, dh).noalias() = d_scores * t.k.middleCols(h * dh, dh);
    dk.middleCols(h * dh, dh).noalias() = d_scores.transpose() * t.q.middleCols(h * dh, dh);
  }
  Matrix dx, tmp;
  linear_backward(x, dq, params, prefix + ".q", &grads, &dx);
  linear_backward(x, dk, params, prefix + ".k", &grads, &tmp);
  dx += tmp;
  linear_backward(x, dv, params, prefix + ".v", &grads, &tmp);
  dx += tmp;
  return dx;
}

}  // namespace

ParameterSet init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const auto d = static_cast<std::size_t>(cfg.d_model);
  const auto lp = static_cast<std::size_t>(cfg.patch.patch_length);
  const auto P = static_cast<std::size_t>(cfg.num_patches());
  ParameterSet p;
  add_linear(p, "embed", lp, d, false, seed);
  p.add("embed.pos", {P, d});
  for (int b = 0; b < cfg.num_layers; ++b) {
    const std::string blk = block_prefix(b);
    for (const char* name : {".attn.q", ".attn.k", ".attn.v", ".attn.o"}) {
      add_linear(p, blk + name, d, d, false, seed);
    }
    add_layer_norm(p, blk + ".ln1", d);
    if (cfg.block_has_atm(b)) {
      const std::string atm = blk + ".atm";
      p.add(atm + ".gate.trend_weight", {1}, true).data[0] = 0.5;
      p.add(atm + ".gate.seasonal_weight", {1}, true).data[0] = 0.5;
      const auto gh = static_cast<std::size_t>(cfg.gate_width());
      add_linear(p, atm + ".gate.fc1", d, gh, true, seed);
      add_linear(p, atm + ".gate.fc2", gh, static_cast<std::size_t>(cfg.num_experts), true, seed);
      for (int e = 0; e < cfg.num_experts; ++e) add_linear(p, expert_prefix(atm, e), d, d, true, seed);
      const auto fh = static_cast<std::size_t>(cfg.ffn_hidden);
      add_linear(p, atm + ".fusion.fc1", d, fh, true, seed);
      add_linear(p, atm + ".fusion.fc2", fh, d, true, seed);
    } else {
      const auto fh = static_cast<std::size_t>(cfg.ffn_hidden);
      add_linear(p, blk + ".ffn.fc1", d, fh, false, seed);
      add_linear(p, blk + ".ffn.fc2", fh, d, false, seed);
    }
    add_layer_norm(p, blk + ".ln2", d);
  }
  add_linear(p, "head", d, lp, false, seed);
  return p;
}

std::vector<int> select_top_k(const Vector& logits, const std::vector<bool>& active, int k) {
  std::vector<int> order;
  for (int e = 0; e < static_cast<int>(logits.size()); ++e) {
    if (active[static_cast<std::size_t>(e)]) order.push_back(e);
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return logits(a) > logits(b); });
  order.resize(std::min<std::size_t>(order.size(), static_cast<std::size_t>(k)));
  return order;
}

Matrix embed_patches(const Matrix& patches, const ParameterSet& params, const ModelConfig& cfg) {
  require(patches.cols() == cfg.patch.patch_length,
          "embed_patches: expected patch length " + std::to_string(cfg.patch.patch_length) +
              ", got " + std::to_string(patches.cols()));
  const auto& pos = params.at("embed.pos");
  require(patches.rows() == static_cast<Eigen::Index>(pos.rows()),
          "embed_patches: expected " + std::to_string(pos.rows()) + " patches, got " +
              std::to_string(patches.rows()));
  Matrix tokens = linear(patches, params, "embed");
  tokens += pos.mat();
  return tokens;
}

GateOutput atm_gate(const Matrix& x_bar, const ParameterSet& params, const ModelConfig& cfg,
                    int block) {
  AtmTrace t;
  gate_forward(x_bar, params, cfg, block_prefix(block) + ".atm", t);
  return t.gate;
}

Matrix atm_forward(const Matrix& x_rep, const GateOutput& gate, const ParameterSet& params,
                   const ModelConfig& cfg, int block) {
  AtmTrace t;
  t.gate = gate;
  experts_forward(x_rep, params, cfg, block_prefix(block) + ".atm", t);
  return t.fusion.output;
}

BlockTrace block_forward(const Matrix& tokens, const ParameterSet& params, const ModelConfig& cfg,
                         int block) {
  const std::string blk = block_prefix(block);
  BlockTrace t;
  t.input = tokens;
  attention_forward(tokens, params, cfg, blk + ".attn", t.attention);
  t.hidden = layer_norm(tokens + t.attention.output, params, blk + ".ln1", t.ln1);
  t.has_atm = cfg.block_has_atm(block);
  Matrix branch_sum;
  if (t.has_atm) {
    const std::string atm = blk + ".atm";
    gate_forward(t.hidden, params, cfg, atm, t.atm);
    experts_forward(t.hidden, params, cfg, atm, t.atm);
    branch_sum = cfg.atm_residual ? Matrix(t.hidden + t.atm.fusion.output) : t.atm.fusion.output;
  } else {
    t.ffn = ffn_forward(t.hidden, params, blk + ".ffn");
    branch_sum = t.hidden + t.ffn.output;
  }
  t.output = layer_norm(branch_sum, params, blk + ".ln2", t.ln2);
  if (!t.output.allFinite()) {
    throw RuntimeError("non-finite activation in encoder block " + std::to_string(block));
  }
  return t;
}

Matrix block_backward(const BlockTrace& t, const Matrix& d_output, const ParameterSet& params,
                      const ModelConfig& cfg, int block, ParameterSet& grads) {
  const std::string blk = block_prefix(block);
  const Matrix d_sum = layer_norm_backward(d_output, t.ln2, params, blk + ".ln2", &grads);
  Matrix d_hidden;
  if (t.has_atm) {
    d_hidden = atm_backward(t.hidden, t.atm, d_sum, params, cfg, blk + ".atm", grads);
    if (cfg.atm_residual) d_hidden += d_sum;
  } else {
    d_hidden = ffn_backward(t.hidden, t.ffn, d_sum, params, blk + ".ffn", &grads) + d_sum;
  }
  const Matrix d_res = layer_norm_backward(d_hidden, t.ln1, params, blk + ".ln1", &grads);
  Matrix dx = attention_backward(t.input, t.attention, d_res, params, cfg, blk + ".attn", grads);
  dx += d_res;
  return dx;
}

Matrix encoder_block(const Matrix& tokens, const ParameterSet& params, const ModelConfig& cfg,
                     int block) {
  return block_forward(tokens, params, cfg, block).output;
}

EncoderTrace encode(const Vector& channel, const ParameterSet& params, const ModelConfig& cfg) {
  EncoderTrace t;
  t.patches = data::make_patches(channel, cfg.patch);
  t.tokens = embed_patches(t.patches, params, cfg);
  t.blocks.reserve(static_cast<std::size_t>(cfg.num_layers));
  for (int b = 0; b < cfg.num_layers; ++b) {
    t.blocks.push_back(block_forward(b == 0 ? t.tokens : t.blocks.back().output, params, cfg, b));
  }
  return t;
}

Vector encode_backward(const EncoderTrace& t, const Matrix& d_representation,
                       const ParameterSet& params, const ModelConfig& cfg, ParameterSet& grads) {
  Matrix d = d_representation;
  for (int b = cfg.num_layers - 1; b >= 0; --b) {
    d = block_backward(t.blocks[static_cast<std::size_t>(b)], d, params, cfg, b, grads);
  }
  grads.at("embed.pos").mat() += d;
  Matrix d_patches;
  linear_backward(t.patches, d, params, "embed", &grads, &d_patches);

  // Adjoint of make_patches: padded entries copy the final input value.
  const int T = cfg.seq_len;
  Vector d_channel = Vector::Zero(T);
  for (Eigen::Index p = 0; p < d_patches.rows(); ++p) {
    for (Eigen::Index j = 0; j < d_patches.cols(); ++j) {
      const auto pos = p * cfg.patch.stride + j;
      d_channel(std::min<Eigen::Index>(pos, T - 1)) += d_patches(p, j);
    }
  }
  return d_channel;
}

std::vector<GateOutput> ForwardTrace::gates(int block) const {
  std::vector<GateOutput> out;
  for (const auto& ch : channels) {
    const auto& bt = ch.encoder.blocks.at(static_cast<std::size_t>(block));
    if (bt.has_atm) out.push_back(bt.atm.gate);
  }
  return out;
}

ForwardTrace forward(const data::TimeSeries& series, const data::MaskMatrix& mask,
                     const ParameterSet& params, const ModelConfig& cfg) {
  require(series.length() == cfg.seq_len,
          "forward: series length " + std::to_string(series.length()) +
              " does not match model.seq_len " + std::to_string(cfg.seq_len));
  require(mask.mask.rows() == series.length() && mask.mask.cols() == series.channels(),
          "forward: mask shape does not match series shape");
  ForwardTrace t;
  auto [normalized, stats] = data::revin_normalize(series);
  t.stats = std::move(stats);
  t.normalized = std::move(normalized.values);
  t.masked_input = t.normalized.cwiseProduct(mask.mask);
  t.reconstruction_normalized.resize(series.length(), series.channels());
  t.channels.resize(static_cast<std::size_t>(series.channels()));
  for (Eigen::Index c = 0; c < series.channels(); ++c) {
    auto& ch = t.channels[static_cast<std::size_t>(c)];
    ch.encoder = encode(t.masked_input.col(c), params, cfg);
    ch.head_output = linear(ch.encoder.representation(), params, "head");
    t.reconstruction_normalized.col(c) = data::fold_patches(ch.head_output, cfg.seq_len, cfg.patch);
  }
  t.reconstruction = data::revin_denormalize(t.reconstruction_normalized, t.stats);
  return t;
}

double masked_mse(const Matrix& prediction, const Matrix& target, const data::MaskMatrix& mask) {
  require(prediction.rows() == target.rows() && prediction.cols() == target.cols() &&
              mask.mask.rows() == target.rows() && mask.mask.cols() == target.cols(),
          "masked_mse: shape mismatch");
  const auto n = mask.masked_count();
  if (n == 0) throw RuntimeError("empty objective: no masked points");
  const auto masked = (mask.mask.array() == 0.0).cast<double>();
  return ((prediction - target).array().square() * masked).sum() / static_cast<double>(n);
}

double local_loss(const Matrix& x_hat, const Matrix& x, const data::MaskMatrix& mask,
                  const ParameterSet& theta, const ParameterSet& theta_hat, double lambda) {
  require(lambda >= 0.0, "local_loss: lambda must be nonnegative");
  const auto n = mask.masked_count();
  if (n == 0 && lambda == 0.0) throw RuntimeError("empty objective: no masked points");
  const double recon = n > 0 ? masked_mse(x_hat, x, mask) : 0.0;
  return recon + lambda * atm_squared_distance(theta, theta_hat);
}

void add_alignment_gradient(const ParameterSet& theta, const ParameterSet& theta_hat, double lambda,
                            ParameterSet& grads, double scale) {
  theta.require_same_layout(theta_hat);
  const double c = 2.0 * lambda * scale;
  for (std::size_t i = 0; i < theta.entries().size(); ++i) {
    const auto& e = theta.entries()[i];
    if (!e.atm) continue;
    const auto& ref = theta_hat.entries()[i].tensor.data;
    auto& g = grads.entries()[i].tensor.data;
    for (std::size_t j = 0; j < g.size(); ++j) g[j] += c * (e.tensor.data[j] - ref[j]);
  }
}

void accumulate_reconstruction_gradient(const ForwardTrace& trace, const data::MaskMatrix& mask,
                                        const ParameterSet& params, const ModelConfig& cfg,
                                        ParameterSet& grads, double scale) {
  const auto n = mask.masked_count();
  if (n == 0) throw RuntimeError("empty objective: no masked points");
  const auto masked = (mask.mask.array() == 0.0).cast<double>();
  const Matrix d_recon = (2.0 * scale / static_cast<double>(n)) *
                         ((trace.reconstruction_normalized - trace.normalized).array() * masked)
                             .matrix();
  const Vector coverage = data::patch_coverage(cfg.seq_len, cfg.patch);
  for (std::size_t c = 0; c < trace.channels.size(); ++c) {
    const auto& ch = trace.channels[c];
    Matrix d_head(ch.head_output.rows(), ch.head_output.cols());
    for (Eigen::Index p = 0; p < d_head.rows(); ++p) {
      for (Eigen::Index j = 0; j < d_head.cols(); ++j) {
        const auto t = p * cfg.patch.stride + j;
        d_head(p, j) = t < cfg.seq_len ? d_recon(t, static_cast<Eigen::Index>(c)) / coverage(t) : 0.0;
      }
    }
    Matrix d_rep;
    linear_backward(ch.encoder.representation(), d_head, params, "head", &grads, &d_rep);
    encode_backward(ch.encoder, d_rep, params, cfg, grads);
  }
}

ParameterSet backward(const ForwardTrace& trace, const data::MaskMatrix& mask,
                      const ParameterSet& params, const ModelConfig& cfg,
                      const BackwardOptions& options) {
  ParameterSet grads = params.zeros_like();
  if (options.include_reconstruction) {
    accumulate_reconstruction_gradient(trace, mask, params, cfg, grads);
  }
  if (options.theta_hat != nullptr) {
    add_alignment_gradient(params, *options.theta_hat, options.lambda, grads);
  }
  return grads;
}

double objective(const ForwardTrace& trace, const data::MaskMatrix& mask,
                 const ParameterSet& params, const BackwardOptions& options) {
  double value = 0.0;
  if (options.include_reconstruction) {
    value += masked_mse(trace.reconstruction_normalized, trace.normalized, mask);
  }
  if (options.theta_hat != nullptr) {
    value += options.lambda * atm_squared_distance(params, *options.theta_hat);
  }
  return value;
}

}  // namespace ffts::model
