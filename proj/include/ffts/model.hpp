#pragma once

#include "ffts/common.hpp"
#include "ffts/data.hpp"
#include "ffts/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace ffts::model {

enum class AtmPlacement { every_block, final_block };

struct ModelConfig {
  /// Input window length T; fixes the patch count and positional table.
  int seq_len = 512;
  int d_model = 32;
  int num_layers = 2;
  int num_heads = 4;
  data::PatchConfig patch{16, 8};
  int num_experts = 4;
  int top_k = 3;
  int ffn_hidden = 64;
  /// Hidden width of the gating FFN; 0 means d_model / 2 (at least 1).
  int gate_hidden = 0;
  int decomposition_kernel = 25;
  AtmPlacement atm_placement = AtmPlacement::every_block;
  /// Block output is LN(u + ATM(u)) when true, LN(ATM(u)) otherwise.
  bool atm_residual = true;
  /// Expert i average-pools the patch axis by 2^i and upsamples back.
  bool timescale_pooling = false;
  /// Experts the gate may route to; empty means all of them.
  std::vector<int> active_experts;

  void validate() const;
  int num_patches() const { return patch.num_patches(seq_len); }
  int gate_width() const;
  bool block_has_atm(int block) const;
  std::vector<bool> active_mask() const;
  int head_dim() const { return d_model / num_heads; }
};

std::string block_prefix(int block);

/// Fresh replica: affine weights uniform in +-1/sqrt(fan_in), biases and
/// positional table zero, layer-norm gains one, w_t = w_s = 0.5.
ParameterSet init_params(const ModelConfig& cfg, std::uint64_t seed);

struct GateOutput {
  /// Patch-pooled gating logits, one per expert.
  Vector logits;
  /// Softmax over the active experts; zero for inactive ones.
  Vector weights;
  /// top_k expert indices by descending weight, ties to the lower index.
  std::vector<int> selected;
  /// weights[selected] / sum(weights[selected]).
  Vector renormalized_weights;
};

/// Picks the k largest logits among the active experts (ties: lower index).
std::vector<int> select_top_k(const Vector& logits, const std::vector<bool>& active, int k);

struct LayerNormCache {
  Matrix normalized;
  Vector inv_std;
};

struct FfnTrace {
  Matrix pre;
  Matrix act;
  Matrix output;
};

struct AttentionTrace {
  Matrix q, k, v;
  std::vector<Matrix> probs;
  Matrix context;
  Matrix output;
};

struct AtmTrace {
  Matrix trend;
  Matrix seasonal;
  Matrix mid;
  FfnTrace gate_ffn;
  GateOutput gate;
  /// Pooled expert inputs per selected expert; empty without timescale pooling.
  std::vector<Matrix> expert_inputs;
  std::vector<Matrix> expert_outputs;
  Matrix mix;
  FfnTrace fusion;
};

struct BlockTrace {
  Matrix input;
  AttentionTrace attention;
  LayerNormCache ln1;
  Matrix hidden;
  bool has_atm = false;
  AtmTrace atm;
  FfnTrace ffn;
  LayerNormCache ln2;
  Matrix output;
};

struct EncoderTrace {
  Matrix patches;
  Matrix tokens;
  std::vector<BlockTrace> blocks;
  /// Final representation X_rep, P x d_model.
  const Matrix& representation() const { return blocks.empty() ? tokens : blocks.back().output; }
};

/// patches (P x L_p) -> tokens (P x d_model), including positional embedding.
Matrix embed_patches(const Matrix& patches, const ParameterSet& params, const ModelConfig& cfg);

/// Trend/seasonal decomposition, gating FFN, softmax and top-k routing.
GateOutput atm_gate(const Matrix& x_bar, const ParameterSet& params, const ModelConfig& cfg,
                    int block);
/// Routed expert mixture followed by the fusion FFN (no residual).
Matrix atm_forward(const Matrix& x_rep, const GateOutput& gate, const ParameterSet& params,
                   const ModelConfig& cfg, int block);

BlockTrace block_forward(const Matrix& tokens, const ParameterSet& params, const ModelConfig& cfg,
                         int block);
/// Accumulates parameter gradients into `grads`; returns d(loss)/d(tokens).
Matrix block_backward(const BlockTrace& trace, const Matrix& d_output, const ParameterSet& params,
                      const ModelConfig& cfg, int block, ParameterSet& grads);
/// Attention sublayer plus LN-residual, then ATM (or FFN) plus LN-residual.
Matrix encoder_block(const Matrix& tokens, const ParameterSet& params, const ModelConfig& cfg,
                     int block);

/// One (already normalized and masked) channel through patching, embedding
/// and every encoder block.
EncoderTrace encode(const Vector& channel, const ParameterSet& params, const ModelConfig& cfg);
/// Returns d(loss)/d(channel input).
Vector encode_backward(const EncoderTrace& trace, const Matrix& d_representation,
                       const ParameterSet& params, const ModelConfig& cfg, ParameterSet& grads);

struct ChannelTrace {
  EncoderTrace encoder;
  Matrix head_output;
};

struct ForwardTrace {
  data::RevinStats stats;
  Matrix normalized;
  Matrix masked_input;
  std::vector<ChannelTrace> channels;
  /// Reconstruction on the normalized scale.
  Matrix reconstruction_normalized;
  /// Reconstruction in the series' original units.
  Matrix reconstruction;

  /// Gate decisions of one block, one entry per channel.
  std::vector<GateOutput> gates(int block) const;
};

/// normalize -> mask -> patch -> embed -> blocks -> per-patch linear head ->
/// fold -> denormalize.
ForwardTrace forward(const data::TimeSeries& series, const data::MaskMatrix& mask,
                     const ParameterSet& params, const ModelConfig& cfg);

/// Mean squared error over masked points. Throws RuntimeError("empty
/// objective") when nothing is masked.
double masked_mse(const Matrix& prediction, const Matrix& target, const data::MaskMatrix& mask);

/// (1/|M|) sum_masked (x_hat - x)^2 + lambda * ||theta_T - theta_hat_T||^2.
/// With |M| = 0 only lambda > 0 yields a defined objective.
double local_loss(const Matrix& x_hat, const Matrix& x, const data::MaskMatrix& mask,
                  const ParameterSet& theta, const ParameterSet& theta_hat, double lambda);

/// Adds 2 * lambda * (theta_T - theta_hat_T) * scale to the ATM gradients.
void add_alignment_gradient(const ParameterSet& theta, const ParameterSet& theta_hat, double lambda,
                            ParameterSet& grads, double scale = 1.0);

/// Gradient of the masked reconstruction MSE (normalized scale) scaled by
/// `scale`, accumulated into `grads`.
void accumulate_reconstruction_gradient(const ForwardTrace& trace, const data::MaskMatrix& mask,
                                        const ParameterSet& params, const ModelConfig& cfg,
                                        ParameterSet& grads, double scale = 1.0);

struct BackwardOptions {
  const ParameterSet* theta_hat = nullptr;
  double lambda = 0.0;
  bool include_reconstruction = true;
};

/// Exact gradient of the local objective for one sample.
ParameterSet backward(const ForwardTrace& trace, const data::MaskMatrix& mask,
                      const ParameterSet& params, const ModelConfig& cfg,
                      const BackwardOptions& options);

/// Objective value matching `backward` (reconstruction on the normalized scale).
double objective(const ForwardTrace& trace, const data::MaskMatrix& mask,
                 const ParameterSet& params, const BackwardOptions& options);

}  // namespace ffts::model
