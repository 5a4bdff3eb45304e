#pragma once

#include "ffts/common.hpp"

#include <cstddef>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace ffts {

/// Dense row-major tensor of doubles with an explicit shape.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape_);

  std::size_t numel() const { return data.size(); }
  std::size_t rows() const { return shape.size() >= 2 ? shape.front() : 1; }
  std::size_t cols() const { return rows() == 0 ? 0 : numel() / rows(); }

  /// 2-D view (rows x cols); a 1-D tensor of n elements is viewed as 1 x n.
  Eigen::Map<Matrix> mat();
  Eigen::Map<const Matrix> mat() const;
  Eigen::Map<RowVector> row();
  Eigen::Map<const RowVector> row() const;

  bool operator==(const Tensor&) const = default;
};

std::string shape_string(const std::vector<std::size_t>& shape);

/// Named, ordered collection of tensors for one model replica. Iteration
/// follows insertion order. A subset of names is flagged as the ATM
/// parameters (the tensors pulled toward the broadcast global ATM).
class ParameterSet {
 public:
  struct Entry {
    std::string name;
    Tensor tensor;
    bool atm = false;
  };

  Tensor& add(std::string name, std::vector<std::size_t> shape, bool atm = false);
  Tensor& add(std::string name, Tensor tensor, bool atm = false);

  bool contains(std::string_view name) const;
  Tensor& at(std::string_view name);
  const Tensor& at(std::string_view name) const;
  bool is_atm(std::string_view name) const;

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  std::vector<std::string> names() const;
  std::vector<std::string> atm_names() const;
  std::size_t size() const { return entries_.size(); }
  std::size_t numel() const;

  /// Same names, shapes and ATM flags, all values zero.
  ParameterSet zeros_like() const;
  /// Throws UsageError naming the first tensor whose name, shape or ATM
  /// flag differs.
  void require_same_layout(const ParameterSet& other) const;

  bool operator==(const ParameterSet& other) const;

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Sum over ATM tensors of ||a - b||^2.
double atm_squared_distance(const ParameterSet& a, const ParameterSet& b);
/// Max elementwise |a - b| over all tensors.
double max_abs_difference(const ParameterSet& a, const ParameterSet& b);

}  // namespace ffts
