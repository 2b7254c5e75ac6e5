#pragma once

#include <cmath>
#include <concepts>
#include <cstddef>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "situ/error.hpp"

namespace situ::numeric {

using Shape = std::vector<std::size_t>;

inline std::size_t volume(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out + "]";
}

/// Dense row-major array of rank 0 (scalar), 1 or 2.
template <std::floating_point Real>
class Tensor {
 public:
  using value_type = Real;

  Tensor() = default;
  explicit Tensor(Shape shape, Real fill = Real(0)) : shape_(std::move(shape)), data_(volume(shape_), fill) {}
  Tensor(Shape shape, std::vector<Real> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != volume(shape_))
      throw NumericError("tensor: " + std::to_string(data_.size()) + " values for shape " + shape_string(shape_));
  }

  static Tensor scalar(Real v) { return Tensor(Shape{}, std::vector<Real>{v}); }
  static Tensor vector(std::vector<Real> v) {
    auto n = v.size();
    return Tensor(Shape{n}, std::move(v));
  }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<Real> v) {
    return Tensor(Shape{rows, cols}, std::move(v));
  }
  template <class Rng>
  static Tensor uniform(Shape shape, Real lo, Real hi, Rng& rng) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<Real> dist(lo, hi);
    for (auto& x : t.data_) x = dist(rng);
    return t;
  }
  template <class Rng>
  static Tensor normal(Shape shape, Real stddev, Rng& rng) {
    Tensor t(std::move(shape));
    std::normal_distribution<Real> dist(Real(0), stddev);
    for (auto& x : t.data_) x = dist(rng);
    return t;
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  std::size_t rows() const { return rank() == 0 ? 1 : shape_[0]; }
  std::size_t cols() const { return rank() == 2 ? shape_[1] : 1; }

  Real& operator[](std::size_t i) { return data_[i]; }
  Real operator[](std::size_t i) const { return data_[i]; }
  Real& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  Real at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  Real item() const {
    if (data_.size() != 1) throw NumericError("tensor: item() on shape " + shape_string(shape_));
    return data_[0];
  }

  std::span<Real> span() { return data_; }
  std::span<const Real> span() const { return data_; }
  std::span<const Real> row(std::size_t r) const { return std::span<const Real>(data_).subspan(r * cols(), cols()); }
  std::vector<Real>& values() { return data_; }
  const std::vector<Real>& values() const { return data_; }

  void fill(Real v) { std::fill(data_.begin(), data_.end(), v); }
  bool all_finite() const {
    for (Real x : data_)
      if (!std::isfinite(x)) return false;
    return true;
  }

  template <std::floating_point Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape_, std::vector<Other>(data_.begin(), data_.end()));
  }

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_;
  std::vector<Real> data_;
};

}  // namespace situ::numeric
