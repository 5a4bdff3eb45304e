#pragma once

#include "ffts/tensor.hpp"

#include <string>
#include <unordered_set>

namespace ffts {

struct SgdConfig {
  double learning_rate = 1e-3;
  double momentum = 0.0;
  /// Global gradient-norm clip; 0 disables clipping.
  double grad_clip = 0.0;
};

/// Plain SGD with optional heavy-ball momentum. A tensor whose gradient and
/// velocity are both zero is left bitwise unchanged by a step.
class Sgd {
 public:
  explicit Sgd(SgdConfig cfg) : cfg_(cfg) {}

  /// Updates `params` in place. Names in `frozen` are skipped entirely.
  void step(ParameterSet& params, ParameterSet& grads,
            const std::unordered_set<std::string>* frozen = nullptr);

  const SgdConfig& config() const { return cfg_; }

 private:
  SgdConfig cfg_;
  ParameterSet velocity_;
  bool has_velocity_ = false;
};

double global_norm(const ParameterSet& grads);

}  // namespace ffts
