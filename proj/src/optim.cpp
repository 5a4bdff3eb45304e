#include "ffts/optim.hpp"

#include <cmath>

namespace ffts {

double global_norm(const ParameterSet& grads) {
  double sum = 0.0;
  for (const auto& e : grads.entries()) {
    for (double g : e.tensor.data) sum += g * g;
  }
  return std::sqrt(sum);
}

void Sgd::step(ParameterSet& params, ParameterSet& grads,
               const std::unordered_set<std::string>* frozen) {
  params.require_same_layout(grads);
  if (cfg_.grad_clip > 0.0) {
    const double norm = global_norm(grads);
    if (norm > cfg_.grad_clip) {
      const double scale = cfg_.grad_clip / norm;
      for (auto& e : grads.entries()) {
        for (double& g : e.tensor.data) g *= scale;
      }
    }
  }
  if (cfg_.momentum > 0.0 && !has_velocity_) {
    velocity_ = params.zeros_like();
    has_velocity_ = true;
  }
  auto& entries = params.entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (frozen != nullptr && frozen->count(entries[i].name) != 0) continue;
    auto& p = entries[i].tensor.data;
    const auto& g = grads.entries()[i].tensor.data;
    if (cfg_.momentum > 0.0) {
      auto& v = velocity_.entries()[i].tensor.data;
      for (std::size_t j = 0; j < p.size(); ++j) {
        v[j] = cfg_.momentum * v[j] + g[j];
        p[j] -= cfg_.learning_rate * v[j];
      }
    } else {
      for (std::size_t j = 0; j < p.size(); ++j) p[j] -= cfg_.learning_rate * g[j];
    }
  }
}

}  // namespace ffts
