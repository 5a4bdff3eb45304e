#include "ffts/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

namespace ffts {

Tensor::Tensor(std::vector<std::size_t> shape_) : shape(std::move(shape_)) {
  const std::size_t n =
      std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  data.assign(n, 0.0);
}

Eigen::Map<Matrix> Tensor::mat() {
  return {data.data(), static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(cols())};
}
Eigen::Map<const Matrix> Tensor::mat() const {
  return {data.data(), static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(cols())};
}
Eigen::Map<RowVector> Tensor::row() {
  return {data.data(), static_cast<Eigen::Index>(data.size())};
}
Eigen::Map<const RowVector> Tensor::row() const {
  return {data.data(), static_cast<Eigen::Index>(data.size())};
}

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor& ParameterSet::add(std::string name, std::vector<std::size_t> shape, bool atm) {
  return add(std::move(name), Tensor(std::move(shape)), atm);
}

Tensor& ParameterSet::add(std::string name, Tensor tensor, bool atm) {
  require(!contains(name), "duplicate parameter name '" + name + "'");
  index_.emplace(name, entries_.size());
  entries_.push_back({std::move(name), std::move(tensor), atm});
  return entries_.back().tensor;
}

bool ParameterSet::contains(std::string_view name) const {
  return index_.find(std::string(name)) != index_.end();
}

Tensor& ParameterSet::at(std::string_view name) {
  auto it = index_.find(std::string(name));
  require(it != index_.end(), "unknown parameter '" + std::string(name) + "'");
  return entries_[it->second].tensor;
}

const Tensor& ParameterSet::at(std::string_view name) const {
  auto it = index_.find(std::string(name));
  require(it != index_.end(), "unknown parameter '" + std::string(name) + "'");
  return entries_[it->second].tensor;
}

bool ParameterSet::is_atm(std::string_view name) const {
  auto it = index_.find(std::string(name));
  return it != index_.end() && entries_[it->second].atm;
}

std::vector<std::string> ParameterSet::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.name);
  return out;
}

std::vector<std::string> ParameterSet::atm_names() const {
  std::vector<std::string> out;
  for (const auto& e : entries_) {
    if (e.atm) out.push_back(e.name);
  }
  return out;
}

std::size_t ParameterSet::numel() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor.numel();
  return n;
}

ParameterSet ParameterSet::zeros_like() const {
  ParameterSet out;
  for (const auto& e : entries_) out.add(e.name, e.tensor.shape, e.atm);
  return out;
}

void ParameterSet::require_same_layout(const ParameterSet& other) const {
  require(entries_.size() == other.entries_.size(),
          "parameter sets differ in tensor count (" + std::to_string(entries_.size()) + " vs " +
              std::to_string(other.entries_.size()) + ")");
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& a = entries_[i];
    const auto& b = other.entries_[i];
    require(a.name == b.name, "tensor '" + a.name + "' does not match '" + b.name + "'");
    require(a.tensor.shape == b.tensor.shape,
            "tensor '" + a.name + "' has shape " + shape_string(a.tensor.shape) + " vs " +
                shape_string(b.tensor.shape));
    require(a.atm == b.atm, "tensor '" + a.name + "' differs in ATM membership");
  }
}

bool ParameterSet::operator==(const ParameterSet& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& a = entries_[i];
    const auto& b = other.entries_[i];
    if (a.name != b.name || a.atm != b.atm || !(a.tensor == b.tensor)) return false;
  }
  return true;
}

double atm_squared_distance(const ParameterSet& a, const ParameterSet& b) {
  a.require_same_layout(b);
  double sum = 0.0;
  for (std::size_t i = 0; i < a.entries().size(); ++i) {
    if (!a.entries()[i].atm) continue;
    const auto& x = a.entries()[i].tensor.data;
    const auto& y = b.entries()[i].tensor.data;
    for (std::size_t j = 0; j < x.size(); ++j) sum += (x[j] - y[j]) * (x[j] - y[j]);
  }
  return sum;
}

double max_abs_difference(const ParameterSet& a, const ParameterSet& b) {
  a.require_same_layout(b);
  double m = 0.0;
  for (std::size_t i = 0; i < a.entries().size(); ++i) {
    const auto& x = a.entries()[i].tensor.data;
    const auto& y = b.entries()[i].tensor.data;
    for (std::size_t j = 0; j < x.size(); ++j) m = std::max(m, std::abs(x[j] - y[j]));
  }
  return m;
}

}  // namespace ffts
