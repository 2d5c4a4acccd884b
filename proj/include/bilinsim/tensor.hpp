#pragma once

// Dense tensor algebra used by the oracle paths: symmetrisation, Frobenius
// products, partial traces and Gaussian (Isserlis) moment machinery.
// Everything here is written with explicit index loops on purpose; the
// closed-form similarity code never calls into these routines for its
// production paths.

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <utility>
#include <vector>

namespace bilinsim {

using Shape = std::vector<std::size_t>;

// Row-major array of doubles. An empty shape denotes a scalar (one value).
class DenseTensor {
 public:
  DenseTensor() : values_(1, 0.0) {}
  explicit DenseTensor(Shape shape);
  DenseTensor(Shape shape, std::vector<double> values);

  static DenseTensor scalar(double v) { return DenseTensor({}, {v}); }

  const Shape& shape() const { return shape_; }
  std::size_t order() const { return shape_.size(); }
  std::size_t size() const { return values_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }

  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }

  double operator[](std::size_t flat) const { return values_[flat]; }
  double& operator[](std::size_t flat) { return values_[flat]; }

  double at(std::initializer_list<std::size_t> index) const;
  double& at(std::initializer_list<std::size_t> index);
  double at(std::span<const std::size_t> index) const { return values_[offset(index)]; }
  double& at(std::span<const std::size_t> index) { return values_[offset(index)]; }

  std::size_t offset(std::span<const std::size_t> index) const;
  std::vector<std::size_t> unravel(std::size_t flat) const;

  // Throws DomainError on NaN/Inf.
  void check_finite() const;

 private:
  Shape shape_;
  std::vector<double> values_;
};

std::size_t shape_size(const Shape& shape);

// Mean over all permutations of the `count` contiguous axes starting at
// `first_axis`. Requires equal lengths on those axes and count <= 8.
DenseTensor symmetrise(const DenseTensor& t, std::size_t first_axis, std::size_t count);

// True when t equals its symmetrisation over the given axes within `tol`
// (absolute, scaled by max |entry|).
bool is_symmetric(const DenseTensor& t, std::size_t first_axis, std::size_t count,
                  double tol = 1e-9);

double frobenius_inner(const DenseTensor& a, const DenseTensor& b);

// Output axis k is input axis perm[k].
DenseTensor permute_axes(const DenseTensor& t, std::span<const std::size_t> perm);

// Contracts axes (0,1), (2,3), ..., (2m-2, 2m-1). Order drops by 2m.
DenseTensor partial_trace(const DenseTensor& t, std::size_t pairs);

// Double factorial with (-1)!! = 0!! = 1.
std::uint64_t double_factorial(int n);
std::uint64_t binomial(int n, int k);
std::uint64_t factorial(int n);

struct PairingCoefficients {
  int order = 0;
  // coefficients[m] counts the perfect matchings of the 2n indices of
  // <A|Lambda|B> that contain exactly m pairs internal to A (and m to B).
  std::vector<std::uint64_t> coefficients;
};

// c_{n,m} = C(n,2m)^2 ((2m-1)!!)^2 (n-2m)! for 1 <= n <= 8.
PairingCoefficients gaussian_pair_coefficients(int n);

// A perfect matching on {0, ..., k-1}: k/2 disjoint pairs with first < second,
// sorted by first element.
using Matching = std::vector<std::pair<int, int>>;

// All (k-1)!! perfect matchings of {0..k-1}; k even, 2 <= k <= 12.
std::vector<Matching> enumerate_matchings(int k);

// E[ (x~)^{(x) 2n} ] for x~ = (1, x), x ~ N(0, I_d). Shape (d+1)^{2n}.
// Guarded at 1e7 entries.
DenseTensor moment_tensor_lifted(int n, int d);

// E[ x^{(x) 2n} ] for x ~ N(0, I_d) (no lift). Shape d^{2n}.
DenseTensor moment_tensor_homogeneous(int n, int d);

}  // namespace bilinsim
