#pragma once

#include <algorithm>
#include <array>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <map>
#include <new>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "zsl/errors.hpp"
#include "zsl/rng.hpp"

namespace zsl {

// Dimension sizes of a tensor, rank 0..4.
class Shape {
 public:
  static constexpr std::size_t kMaxRank = 4;

  Shape() = default;
  Shape(std::initializer_list<std::size_t> dims) {
    if (dims.size() > kMaxRank) throw DimensionError("rank exceeds 4");
    for (auto d : dims) dims_[rank_++] = d;
  }
  explicit Shape(std::span<const std::size_t> dims) {
    if (dims.size() > kMaxRank) throw DimensionError("rank exceeds 4");
    for (auto d : dims) dims_[rank_++] = d;
  }

  std::size_t rank() const { return rank_; }
  std::size_t operator[](std::size_t i) const { return dims_[i]; }
  std::size_t numel() const {
    std::size_t n = 1;
    for (std::size_t i = 0; i < rank_; ++i) n *= dims_[i];
    return n;
  }
  std::span<const std::size_t> dims() const { return {dims_.data(), rank_}; }

  friend bool operator==(const Shape& a, const Shape& b) {
    return a.rank_ == b.rank_ &&
           std::equal(a.dims_.begin(), a.dims_.begin() + a.rank_, b.dims_.begin());
  }

  std::string str() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < rank_; ++i) os << (i ? "," : "") << dims_[i];
    os << ']';
    return os.str();
  }

 private:
  std::array<std::size_t, kMaxRank> dims_{};
  std::size_t rank_ = 0;
};

// Cache-line aligned storage: vectorised kernels choose their loop peeling
// from the buffer address, so unaligned buffers make results depend on the
// heap layout.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};
  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }
  template <typename U>
  friend bool operator==(const AlignedAllocator&, const AlignedAllocator<U>&) noexcept {
    return true;
  }
};

// Dense row-major tensor of doubles.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(shape), values_(shape.numel(), fill) {}
  Tensor(Shape shape, const std::vector<double>& values)
      : shape_(shape), values_(values.begin(), values.end()) {
    if (values_.size() != shape_.numel())
      throw DimensionError("tensor of shape " + shape_.str() + " given " +
                           std::to_string(values_.size()) + " values");
  }

  // Row-major literal, e.g. Tensor::matrix({{1, 2}, {3, 4}}).
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> v;
    v.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw DimensionError("ragged matrix literal");
      v.insert(v.end(), row.begin(), row.end());
    }
    return Tensor(Shape{r, c}, std::move(v));
  }

  static Tensor row(std::initializer_list<double> values) {
    return Tensor(Shape{1, values.size()}, std::vector<double>(values));
  }

  static Tensor column(std::span<const double> values) {
    return Tensor(Shape{values.size(), 1},
                  std::vector<double>(values.begin(), values.end()));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.rank(); }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  // Rank-2 accessors.
  std::size_t rows() const { return shape_.rank() >= 1 ? shape_[0] : 1; }
  std::size_t cols() const { return shape_.rank() >= 2 ? shape_[1] : 1; }

  double& operator()(std::size_t r, std::size_t c) {
    assert(r < rows() && c < cols());
    return values_[r * cols() + c];
  }
  double operator()(std::size_t r, std::size_t c) const {
    assert(r < rows() && c < cols());
    return values_[r * cols() + c];
  }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }

  std::span<const double> row_span(std::size_t r) const {
    return {values_.data() + r * cols(), cols()};
  }
  std::span<double> row_span(std::size_t r) {
    return {values_.data() + r * cols(), cols()};
  }

  void fill(double v) { std::fill(values_.begin(), values_.end(), v); }

  bool all_finite() const {
    return std::all_of(values_.begin(), values_.end(),
                       [](double v) { return std::isfinite(v); });
  }

  double sum() const {
    double s = 0.0;
    for (double v : values_) s += v;
    return s;
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.values_ == b.values_;
  }

 private:
  Shape shape_;
  std::vector<double, AlignedAllocator<double>> values_;
};

// Trainable tensor plus its accumulated gradient (same shape).
struct Parameter {
  Tensor value;
  Tensor grad;

  explicit Parameter(Tensor v) : value(std::move(v)), grad(value.shape()) {}
  void zero_grad() { grad.fill(0.0); }
};

// Named parameters in deterministic (lexicographic) order. Element
// addresses are stable, so tapes may hold pointers into the set.
class ParameterSet {
 public:
  Parameter& add(const std::string& name, Tensor value) {
    auto [it, inserted] = params_.try_emplace(name, std::move(value));
    if (!inserted) throw ContractError("duplicate parameter '" + name + "'");
    return it->second;
  }

  Parameter& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw ContractError("unknown parameter '" + name + "'");
    return it->second;
  }
  const Parameter& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ContractError("unknown parameter '" + name + "'");
    return it->second;
  }
  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  void zero_grad() {
    for (auto& [_, p] : params_) p.zero_grad();
  }

  std::size_t size() const { return params_.size(); }
  std::size_t numel() const {
    std::size_t n = 0;
    for (const auto& [_, p] : params_) n += p.value.size();
    return n;
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  // Values only; gradients are not compared.
  friend bool operator==(const ParameterSet& a, const ParameterSet& b) {
    if (a.params_.size() != b.params_.size()) return false;
    auto ib = b.params_.begin();
    for (const auto& [name, p] : a.params_) {
      if (name != ib->first || !(p.value == ib->second.value)) return false;
      ++ib;
    }
    return true;
  }

 private:
  std::map<std::string, Parameter> params_;
};

// Uniform Glorot/Xavier initialisation: U(-b, b), b = sqrt(6 / (fan_in + fan_out)).
inline Tensor glorot_init(Shape shape, Rng& rng) {
  if (shape.rank() != 2) throw DimensionError("glorot_init needs a 2-D shape, got " + shape.str());
  const double bound = std::sqrt(6.0 / static_cast<double>(shape[0] + shape[1]));
  Tensor t(shape);
  for (auto& v : t.values()) v = rng.uniform(-bound, bound);
  return t;
}

inline Tensor glorot_init(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  return glorot_init(shape, rng);
}

}  // namespace zsl
