#pragma once

// Central finite-difference oracle for the local objective. Test-only: it
// only calls forward() and objective(), never the backward pass.

#include "ffts/model.hpp"
#include "ffts/rng.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace ffts::gradcheck {

struct TinyProblem {
  model::ModelConfig cfg;
  ParameterSet params;
  ParameterSet theta_hat;
  data::TimeSeries series;
  data::MaskMatrix mask;
  double lambda = 0.0;
};

/// Random configuration with P <= 4, d_model <= 8 and 1-2 blocks.
inline TinyProblem random_tiny_problem(std::uint64_t seed) {
  Rng rng(seed);
  TinyProblem p;
  auto& c = p.cfg;
  c.patch.patch_length = rng.bernoulli(0.5) ? 2 : 4;
  c.patch.stride = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(c.patch.patch_length)));
  const int target_p = 2 + static_cast<int>(rng.below(3));  // 2..4
  c.seq_len = c.patch.patch_length + (target_p - 2) * c.patch.stride +
              static_cast<int>(rng.below(static_cast<std::uint64_t>(c.patch.stride)));
  const int heads_options[] = {1, 2};
  c.num_heads = heads_options[rng.below(2)];
  c.d_model = c.num_heads * (1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(8 / c.num_heads))));
  c.num_layers = 1 + static_cast<int>(rng.below(2));
  c.num_experts = 2 + static_cast<int>(rng.below(3));
  c.top_k = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(c.num_experts)));
  c.ffn_hidden = 2 + static_cast<int>(rng.below(5));
  c.decomposition_kernel = rng.bernoulli(0.5) ? 1 : 3;
  c.atm_placement = rng.bernoulli(0.7) ? model::AtmPlacement::every_block
                                       : model::AtmPlacement::final_block;
  c.atm_residual = rng.bernoulli(0.7);
  c.timescale_pooling = rng.bernoulli(0.3);

  p.params = model::init_params(c, rng.next_u64());
  // Move away from the symmetric initialization so every path is exercised.
  for (auto& e : p.params.entries()) {
    for (double& v : e.tensor.data) v += 0.3 * rng.normal();
  }
  p.theta_hat = p.params;
  for (auto& e : p.theta_hat.entries()) {
    for (double& v : e.tensor.data) v += 0.2 * rng.normal();
  }
  const int channels = 1 + static_cast<int>(rng.below(2));
  p.series.values.resize(c.seq_len, channels);
  for (int t = 0; t < c.seq_len; ++t)
    for (int ch = 0; ch < channels; ++ch) p.series.values(t, ch) = rng.normal() + 0.1 * t;
  p.mask.mask = Matrix::Ones(c.seq_len, channels);
  for (int t = 0; t < c.seq_len; ++t)
    for (int ch = 0; ch < channels; ++ch)
      if (rng.bernoulli(0.4)) p.mask.mask(t, ch) = 0.0;
  p.mask.mask(0, 0) = 0.0;
  p.lambda = rng.bernoulli(0.5) ? 0.0 : 0.1;
  return p;
}

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_tensor;
  std::size_t checked = 0;
};

/// |a - n| / max(|a|, |n|, floor). The floor keeps roundoff on gradients that
/// are essentially zero from being reported as a relative failure.
inline double relative_error(double analytic, double numeric, double floor = 1e-5) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

inline GradCheckResult check_gradients(const TinyProblem& p, const ParameterSet& analytic,
                                       double step = 1e-5) {
  model::BackwardOptions opt{&p.theta_hat, p.lambda, true};
  GradCheckResult r;
  ParameterSet probe = p.params;
  for (std::size_t i = 0; i < probe.entries().size(); ++i) {
    auto& values = probe.entries()[i].tensor.data;
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double orig = values[j];
      values[j] = orig + step;
      const double up = model::objective(model::forward(p.series, p.mask, probe, p.cfg), p.mask, probe, opt);
      values[j] = orig - step;
      const double down = model::objective(model::forward(p.series, p.mask, probe, p.cfg), p.mask, probe, opt);
      values[j] = orig;
      const double numeric = (up - down) / (2.0 * step);
      const double err = relative_error(analytic.entries()[i].tensor.data[j], numeric);
      ++r.checked;
      if (err > r.max_relative_error) {
        r.max_relative_error = err;
        r.worst_tensor = probe.entries()[i].name;
      }
    }
  }
  return r;
}

}  // namespace ffts::gradcheck
