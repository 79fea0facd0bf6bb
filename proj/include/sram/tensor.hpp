#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "sram/errors.hpp"

namespace sram {

using Index = Eigen::Index;

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using Matrix = MatrixX<double>;
using RowVector = Eigen::RowVectorXd;

inline std::string shape_string(std::span<const Index> shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
  return m.derived().array().isFinite().all();
}

// Dense n-d array. Storage is a matrix whose rows collapse every leading
// dimension and whose columns are the last dimension, so a [3,h,h] kernel is
// a (3h x h) stack and a [n] vector is a 1 x n row.
template <typename Scalar>
class BasicTensor {
 public:
  using MatrixType = MatrixX<Scalar>;

  BasicTensor() = default;

  explicit BasicTensor(std::vector<Index> shape)
      : shape_(std::move(shape)), storage_(MatrixType::Zero(lead(shape_), last(shape_))) {}

  BasicTensor(std::vector<Index> shape, MatrixType storage)
      : shape_(std::move(shape)), storage_(std::move(storage)) {
    if (storage_.rows() != lead(shape_) || storage_.cols() != last(shape_))
      throw DimensionError("tensor storage does not match shape " + shape_string(shape_));
  }

  // Builds from external row-major data. Non-finite entries are rejected.
  static BasicTensor from_row_major(std::vector<Index> shape, std::span<const Scalar> data) {
    BasicTensor t(std::move(shape));
    if (static_cast<Index>(data.size()) != t.size())
      throw DimensionError("tensor data length " + std::to_string(data.size()) +
                           " does not match shape " + shape_string(t.shape_));
    for (Index r = 0; r < t.storage_.rows(); ++r)
      for (Index c = 0; c < t.storage_.cols(); ++c) {
        Scalar v = data[static_cast<std::size_t>(r * t.storage_.cols() + c)];
        if (!std::isfinite(static_cast<double>(v)))
          throw NumericError("non-finite tensor entry at flat index " +
                             std::to_string(r * t.storage_.cols() + c));
        t.storage_(r, c) = v;
      }
    return t;
  }

  static BasicTensor from_matrix(const MatrixType& m) {
    return BasicTensor({m.rows(), m.cols()}, m);
  }

  const std::vector<Index>& shape() const { return shape_; }
  Index size() const { return storage_.size(); }
  Index rank() const { return static_cast<Index>(shape_.size()); }

  const MatrixType& matrix() const { return storage_; }
  // Values may change; the shape may not.
  MatrixType& matrix() { return storage_; }

  std::vector<Scalar> row_major() const {
    std::vector<Scalar> out;
    out.reserve(static_cast<std::size_t>(size()));
    for (Index r = 0; r < storage_.rows(); ++r)
      for (Index c = 0; c < storage_.cols(); ++c) out.push_back(storage_(r, c));
    return out;
  }

 private:
  static Index lead(const std::vector<Index>& shape) {
    if (shape.empty()) return 1;
    return std::accumulate(shape.begin(), shape.end() - 1, Index{1}, std::multiplies<>());
  }
  static Index last(const std::vector<Index>& shape) {
    if (shape.empty()) return 1;
    for (Index d : shape)
      if (d < 0) throw DimensionError("negative dimension in shape " + shape_string(shape));
    return shape.back();
  }

  std::vector<Index> shape_;
  MatrixType storage_;
};

using Tensor = BasicTensor<double>;

// Named parameters, iterated in lexicographic order.
template <typename Scalar>
class BasicParamStore {
 public:
  using TensorType = BasicTensor<Scalar>;
  using MatrixType = MatrixX<Scalar>;

  void add(const std::string& name, TensorType t) {
    auto [it, inserted] = entries_.emplace(name, std::move(t));
    if (!inserted) throw UsageError("duplicate parameter name: " + name);
  }

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }

  const TensorType& at(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw UsageError("unknown parameter: " + name);
    return it->second;
  }

  // Mutable access to values. Assigning a differently-shaped matrix is rejected.
  MatrixType& values(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw UsageError("unknown parameter: " + name);
    return it->second.matrix();
  }

  void assign(const std::string& name, const MatrixType& m) {
    MatrixType& dst = values(name);
    if (dst.rows() != m.rows() || dst.cols() != m.cols())
      throw DimensionError("parameter " + name + " shape is immutable");
    dst = m;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [k, v] : entries_) out.push_back(k);
    return out;
  }

  std::size_t size() const { return entries_.size(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  Index scalar_count() const {
    Index n = 0;
    for (const auto& [k, v] : entries_) n += v.size();
    return n;
  }

 private:
  std::map<std::string, TensorType> entries_;
};

using ParamStore = BasicParamStore<double>;
using GradientMap = std::map<std::string, Matrix>;

// FNV-1a over names, shapes and raw bytes; used to assert that parameter
// groups are untouched by an update.
template <typename Scalar>
std::uint64_t parameter_hash(const BasicParamStore<Scalar>& store, const std::string& prefix = "") {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ull;
    }
  };
  for (const auto& [name, t] : store) {
    if (name.compare(0, prefix.size(), prefix) != 0) continue;
    mix(name.data(), name.size());
    for (Index d : t.shape()) mix(&d, sizeof d);
    mix(t.matrix().data(), static_cast<std::size_t>(t.size()) * sizeof(Scalar));
  }
  return h;
}

}  // namespace sram
