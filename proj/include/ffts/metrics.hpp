#pragma once

#include "ffts/common.hpp"

#include <vector>

namespace ffts::metrics {

double mse(const Matrix& prediction, const Matrix& target);
double mae(const Matrix& prediction, const Matrix& target);
/// (200 / n) * sum |p - t| / (|p| + |t|), with 0/0 taken as 0.
double smape(const Matrix& prediction, const Matrix& target);

struct Classification {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t true_positives = 0;
  std::size_t false_positives = 0;
  std::size_t false_negatives = 0;
  /// Set when precision or recall has a zero denominator; the undefined
  /// value and F1 are reported as 0.
  bool undefined = false;
};

Classification classify(const std::vector<bool>& predicted, const std::vector<bool>& labels);

double f1_score(double precision, double recall);

/// A hit anywhere inside a labeled segment marks the whole segment detected.
std::vector<bool> point_adjust(const std::vector<bool>& predicted, const std::vector<bool>& labels);

/// Linear interpolation between order statistics (q in [0, 1]).
double quantile(std::vector<double> values, double q);

}  // namespace ffts::metrics
