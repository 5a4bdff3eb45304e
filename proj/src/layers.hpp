#pragma once

// Shared differentiable building blocks. Parameters are looked up by name in
// a ParameterSet; gradients accumulate into a ParameterSet of equal layout.

#include "ffts/model.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace ffts::model::detail {

inline Matrix linear(const Matrix& x, const ParameterSet& p, const std::string& prefix) {
  const auto& w = p.at(prefix + ".weight").mat();
  const auto& b = p.at(prefix + ".bias").row();
  Matrix y = x * w;
  y.rowwise() += b;
  return y;
}

/// dx is optional.
inline void linear_backward(const Matrix& x, const Matrix& dy, const ParameterSet& p,
                            const std::string& prefix, ParameterSet* grads, Matrix* dx) {
  if (grads != nullptr) {
    grads->at(prefix + ".weight").mat().noalias() += x.transpose() * dy;
    grads->at(prefix + ".bias").row() += dy.colwise().sum();
  }
  if (dx != nullptr) *dx = dy * p.at(prefix + ".weight").mat().transpose();
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)

inline double gelu(double x) {
  return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + 0.044715 * x * x * x)));
}

inline double gelu_grad(double x) {
  const double t = std::tanh(kGeluC * (x + 0.044715 * x * x * x));
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
}

inline Matrix gelu(const Matrix& x) { return x.unaryExpr([](double v) { return gelu(v); }); }

inline Matrix gelu_backward(const Matrix& pre, const Matrix& dy) {
  return dy.cwiseProduct(pre.unaryExpr([](double v) { return gelu_grad(v); }));
}

constexpr double kLayerNormEps = 1e-5;

inline Matrix layer_norm(const Matrix& x, const ParameterSet& p, const std::string& prefix,
                         LayerNormCache& cache) {
  const auto n = static_cast<double>(x.cols());
  cache.normalized.resize(x.rows(), x.cols());
  cache.inv_std.resize(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mean = x.row(r).sum() / n;
    const double var = (x.row(r).array() - mean).square().sum() / n;
    cache.inv_std(r) = 1.0 / std::sqrt(var + kLayerNormEps);
    cache.normalized.row(r) = (x.row(r).array() - mean) * cache.inv_std(r);
  }
  Matrix y = cache.normalized.array().rowwise() * p.at(prefix + ".gamma").row().array();
  y.rowwise() += p.at(prefix + ".beta").row();
  return y;
}

inline Matrix layer_norm_backward(const Matrix& dy, const LayerNormCache& cache,
                                  const ParameterSet& p, const std::string& prefix,
                                  ParameterSet* grads) {
  if (grads != nullptr) {
    grads->at(prefix + ".gamma").row() += dy.cwiseProduct(cache.normalized).colwise().sum();
    grads->at(prefix + ".beta").row() += dy.colwise().sum();
  }
  const Matrix dxhat = dy.array().rowwise() * p.at(prefix + ".gamma").row().array();
  const auto n = static_cast<double>(dy.cols());
  Matrix dx(dy.rows(), dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const double mean_d = dxhat.row(r).sum() / n;
    const double mean_dx = dxhat.row(r).dot(cache.normalized.row(r)) / n;
    dx.row(r) = cache.inv_std(r) *
                (dxhat.row(r).array() - mean_d - cache.normalized.row(r).array() * mean_dx);
  }
  return dx;
}

/// fc1 -> GELU -> fc2.
inline FfnTrace ffn_forward(const Matrix& x, const ParameterSet& p, const std::string& prefix) {
  FfnTrace t;
  t.pre = linear(x, p, prefix + ".fc1");
  t.act = gelu(t.pre);
  t.output = linear(t.act, p, prefix + ".fc2");
  return t;
}

inline Matrix ffn_backward(const Matrix& x, const FfnTrace& t, const Matrix& dy,
                           const ParameterSet& p, const std::string& prefix, ParameterSet* grads) {
  Matrix d_act;
  linear_backward(t.act, dy, p, prefix + ".fc2", grads, &d_act);
  const Matrix d_pre = gelu_backward(t.pre, d_act);
  Matrix dx;
  linear_backward(x, d_pre, p, prefix + ".fc1", grads, &dx);
  return dx;
}

inline void softmax_rows(Matrix& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double mx = m.row(r).maxCoeff();
    m.row(r) = (m.row(r).array() - mx).exp();
    m.row(r) /= m.row(r).sum();
  }
}

}  // namespace ffts::model::detail
