#include "ffts/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace ffts::metrics {

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  require(a.rows() == b.rows() && a.cols() == b.cols(),
          std::string(what) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
              std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
              std::to_string(b.cols()) + ")");
  require(a.size() > 0, std::string(what) + ": empty input");
}

}  // namespace

double mse(const Matrix& prediction, const Matrix& target) {
  require_same_shape(prediction, target, "mse");
  return (prediction - target).array().square().mean();
}

double mae(const Matrix& prediction, const Matrix& target) {
  require_same_shape(prediction, target, "mae");
  return (prediction - target).array().abs().mean();
}

double smape(const Matrix& prediction, const Matrix& target) {
  require_same_shape(prediction, target, "smape");
  double sum = 0.0;
  for (Eigen::Index i = 0; i < prediction.size(); ++i) {
    const double p = prediction.data()[i];
    const double t = target.data()[i];
    const double den = std::abs(p) + std::abs(t);
    if (den > 0.0) sum += std::abs(p - t) / den;
  }
  return 200.0 * sum / static_cast<double>(prediction.size());
}

double f1_score(double precision, double recall) {
  const double den = precision + recall;
  return den > 0.0 ? 2.0 * precision * recall / den : 0.0;
}

Classification classify(const std::vector<bool>& predicted, const std::vector<bool>& labels) {
  require(predicted.size() == labels.size(), "classify: predictions and labels differ in length");
  Classification c;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (predicted[i] && labels[i]) ++c.true_positives;
    else if (predicted[i]) ++c.false_positives;
    else if (labels[i]) ++c.false_negatives;
  }
  const auto tp = static_cast<double>(c.true_positives);
  const auto pred_pos = tp + static_cast<double>(c.false_positives);
  const auto real_pos = tp + static_cast<double>(c.false_negatives);
  if (pred_pos > 0.0) c.precision = tp / pred_pos;
  else c.undefined = true;
  if (real_pos > 0.0) c.recall = tp / real_pos;
  else c.undefined = true;
  c.f1 = c.undefined ? 0.0 : f1_score(c.precision, c.recall);
  return c;
}

std::vector<bool> point_adjust(const std::vector<bool>& predicted, const std::vector<bool>& labels) {
  require(predicted.size() == labels.size(), "point_adjust: predictions and labels differ in length");
  std::vector<bool> out = predicted;
  std::size_t i = 0;
  while (i < labels.size()) {
    if (!labels[i]) {
      ++i;
      continue;
    }
    std::size_t end = i;
    bool hit = false;
    for (; end < labels.size() && labels[end]; ++end) {
      if (predicted[end]) hit = true;
    }
    if (hit) std::fill(out.begin() + static_cast<std::ptrdiff_t>(i), out.begin() + static_cast<std::ptrdiff_t>(end), true);
    i = end;
  }
  return out;
}

double quantile(std::vector<double> values, double q) {
  require(!values.empty(), "quantile: empty input");
  require(q >= 0.0 && q <= 1.0, "quantile: q must lie in [0, 1]");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

}  // namespace ffts::metrics
