#include "bilinsim/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "bilinsim/errors.hpp"

namespace bilinsim {

namespace {

constexpr std::size_t kMomentGuard = 10'000'000;

std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> s(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
  return s;
}

// Advances a row-major multi-index; returns false after the last element.
bool next_index(std::vector<std::size_t>& idx, const Shape& shape) {
  for (std::size_t i = idx.size(); i-- > 0;) {
    if (++idx[i] < shape[i]) return true;
    idx[i] = 0;
  }
  return false;
}

std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

void enumerate_into(std::vector<int>& remaining, Matching& current, std::vector<Matching>& out) {
  if (remaining.empty()) {
    out.push_back(current);
    return;
  }
  int first = remaining.front();
  for (std::size_t j = 1; j < remaining.size(); ++j) {
    int partner = remaining[j];
    std::vector<int> rest;
    rest.reserve(remaining.size() - 2);
    for (std::size_t q = 1; q < remaining.size(); ++q)
      if (q != j) rest.push_back(remaining[q]);
    current.emplace_back(first, partner);
    enumerate_into(rest, current, out);
    current.pop_back();
  }
}

// Isserlis: E[prod x_{idx[p]}] over positions p for x ~ N(0, I), as the
// literal sum over matchings of Kronecker deltas.
double isserlis(const std::vector<std::size_t>& values, const std::vector<std::vector<Matching>>& by_size) {
  const std::size_t k = values.size();
  if (k == 0) return 1.0;
  if (k % 2) return 0.0;
  double total = 0.0;
  for (const auto& m : by_size[k]) {
    bool ok = true;
    for (auto [a, b] : m) {
      if (values[a] != values[b]) {
        ok = false;
        break;
      }
    }
    if (ok) total += 1.0;
  }
  return total;
}

DenseTensor moment_tensor(int n, int d, bool lifted) {
  if (n < 1) throw DomainError("moment tensor order must be >= 1");
  if (d < 0 || (!lifted && d < 1)) throw DomainError("moment tensor dimension out of range");
  const std::size_t dim = static_cast<std::size_t>(lifted ? d + 1 : d);
  const std::size_t axes = static_cast<std::size_t>(2 * n);
  double entries = std::pow(static_cast<double>(dim), static_cast<double>(axes));
  if (entries > static_cast<double>(kMomentGuard))
    throw GuardError("moment tensor would have " + std::to_string(entries) + " entries (guard 1e7)");

  std::vector<std::vector<Matching>> by_size(axes + 1);
  for (std::size_t k = 2; k <= axes; k += 2) by_size[k] = enumerate_matchings(static_cast<int>(k));

  Shape shape(axes, dim);
  DenseTensor out(shape);
  std::vector<std::size_t> idx(axes, 0);
  std::vector<std::size_t> random_values;
  std::size_t flat = 0;
  do {
    random_values.clear();
    for (std::size_t v : idx)
      if (!lifted || v != 0) random_values.push_back(v);
    out[flat++] = isserlis(random_values, by_size);
  } while (next_index(idx, shape));
  return out;
}

}  // namespace

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

DenseTensor::DenseTensor(Shape shape) : shape_(std::move(shape)) {
  for (std::size_t n : shape_)
    if (n == 0) throw ShapeError("tensor axes must have positive length");
  values_.assign(shape_size(shape_), 0.0);
}

DenseTensor::DenseTensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  for (std::size_t n : shape_)
    if (n == 0) throw ShapeError("tensor axes must have positive length");
  if (values_.size() != shape_size(shape_))
    throw ShapeError("value count " + std::to_string(values_.size()) + " does not match shape " +
                     shape_str(shape_));
  check_finite();
}

double DenseTensor::at(std::initializer_list<std::size_t> index) const {
  return at(std::span<const std::size_t>(index.begin(), index.size()));
}

double& DenseTensor::at(std::initializer_list<std::size_t> index) {
  return at(std::span<const std::size_t>(index.begin(), index.size()));
}

std::size_t DenseTensor::offset(std::span<const std::size_t> index) const {
  if (index.size() != shape_.size()) throw ShapeError("index order does not match tensor order");
  std::size_t off = 0;
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= shape_[i]) throw ShapeError("index out of range");
    off = off * shape_[i] + index[i];
  }
  return off;
}

std::vector<std::size_t> DenseTensor::unravel(std::size_t flat) const {
  std::vector<std::size_t> idx(shape_.size());
  for (std::size_t i = shape_.size(); i-- > 0;) {
    idx[i] = flat % shape_[i];
    flat /= shape_[i];
  }
  return idx;
}

void DenseTensor::check_finite() const {
  for (double v : values_)
    if (!std::isfinite(v)) throw DomainError("tensor contains a non-finite entry");
}

DenseTensor symmetrise(const DenseTensor& t, std::size_t first_axis, std::size_t count) {
  if (first_axis + count > t.order()) throw ShapeError("symmetrise: axis range exceeds tensor order");
  if (count > 8) throw GuardError("symmetrise: more than 8 axes (8! permutations) is not supported");
  if (count <= 1) return t;
  const std::size_t len = t.dim(first_axis);
  for (std::size_t a = first_axis; a < first_axis + count; ++a)
    if (t.dim(a) != len) throw ShapeError("symmetrise: axes in range have unequal lengths");

  const auto strides = strides_of(t.shape());
  std::vector<std::size_t> perm(count);
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<std::vector<std::size_t>> perms;
  do perms.push_back(perm);
  while (std::next_permutation(perm.begin(), perm.end()));

  DenseTensor out(t.shape());
  const double inv = 1.0 / static_cast<double>(perms.size());
  std::vector<std::size_t> idx(t.order(), 0);
  std::size_t flat = 0;
  do {
    std::size_t base = 0;
    for (std::size_t a = 0; a < t.order(); ++a)
      if (a < first_axis || a >= first_axis + count) base += idx[a] * strides[a];
    double acc = 0.0;
    for (const auto& p : perms) {
      std::size_t off = base;
      for (std::size_t k = 0; k < count; ++k) off += idx[first_axis + p[k]] * strides[first_axis + k];
      acc += t[off];
    }
    out[flat++] = acc * inv;
  } while (next_index(idx, t.shape()));
  return out;
}

bool is_symmetric(const DenseTensor& t, std::size_t first_axis, std::size_t count, double tol) {
  DenseTensor s = symmetrise(t, first_axis, count);
  double scale = 0.0, diff = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    scale = std::max(scale, std::abs(t[i]));
    diff = std::max(diff, std::abs(t[i] - s[i]));
  }
  return diff <= tol * std::max(scale, 1.0);
}

double frobenius_inner(const DenseTensor& a, const DenseTensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError("frobenius_inner: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                     " differ");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

DenseTensor permute_axes(const DenseTensor& t, std::span<const std::size_t> perm) {
  if (perm.size() != t.order()) throw ShapeError("permute_axes: permutation length mismatch");
  std::vector<bool> seen(perm.size(), false);
  Shape shape(perm.size());
  for (std::size_t k = 0; k < perm.size(); ++k) {
    if (perm[k] >= perm.size() || seen[perm[k]]) throw DomainError("permute_axes: not a permutation");
    seen[perm[k]] = true;
    shape[k] = t.dim(perm[k]);
  }
  const auto strides = strides_of(t.shape());
  DenseTensor out(shape);
  std::vector<std::size_t> idx(shape.size(), 0);
  std::size_t flat = 0;
  do {
    std::size_t off = 0;
    for (std::size_t k = 0; k < perm.size(); ++k) off += idx[k] * strides[perm[k]];
    out[flat++] = t[off];
  } while (next_index(idx, shape));
  return out;
}

DenseTensor partial_trace(const DenseTensor& t, std::size_t pairs) {
  if (pairs == 0) return t;
  if (2 * pairs > t.order()) throw ShapeError("partial_trace: fewer than 2m axes");
  const std::size_t len = t.dim(0);
  for (std::size_t a = 0; a < 2 * pairs; ++a)
    if (t.dim(a) != len) throw ShapeError("partial_trace: traced axes have unequal lengths");

  Shape rest(t.shape().begin() + static_cast<std::ptrdiff_t>(2 * pairs), t.shape().end());
  const std::size_t rest_size = shape_size(rest);
  const auto strides = strides_of(t.shape());
  std::vector<std::size_t> diag_step(pairs);
  for (std::size_t p = 0; p < pairs; ++p) diag_step[p] = strides[2 * p] + strides[2 * p + 1];

  DenseTensor out(rest);
  Shape traced(pairs, len);
  std::vector<std::size_t> a(pairs, 0);
  do {
    std::size_t off = 0;
    for (std::size_t p = 0; p < pairs; ++p) off += a[p] * diag_step[p];
    for (std::size_t r = 0; r < rest_size; ++r) out[r] += t[off + r];
  } while (next_index(a, traced));
  return out;
}

std::uint64_t double_factorial(int n) {
  if (n < -1) throw DomainError("double factorial of n < -1");
  std::uint64_t r = 1;
  for (int k = n; k > 1; k -= 2) r *= static_cast<std::uint64_t>(k);
  return r;
}

std::uint64_t factorial(int n) {
  if (n < 0) throw DomainError("factorial of negative number");
  std::uint64_t r = 1;
  for (int k = 2; k <= n; ++k) r *= static_cast<std::uint64_t>(k);
  return r;
}

std::uint64_t binomial(int n, int k) {
  if (k < 0 || k > n) return 0;
  std::uint64_t r = 1;
  for (int i = 1; i <= k; ++i) r = r * static_cast<std::uint64_t>(n - k + i) / static_cast<std::uint64_t>(i);
  return r;
}

PairingCoefficients gaussian_pair_coefficients(int n) {
  if (n < 1 || n > 8) throw DomainError("gaussian_pair_coefficients: order must be in [1, 8]");
  PairingCoefficients pc;
  pc.order = n;
  for (int m = 0; 2 * m <= n; ++m) {
    std::uint64_t choose = binomial(n, 2 * m);
    std::uint64_t pairs = double_factorial(2 * m - 1);
    pc.coefficients.push_back(choose * choose * pairs * pairs * factorial(n - 2 * m));
  }
  return pc;
}

std::vector<Matching> enumerate_matchings(int k) {
  if (k < 2 || k % 2 != 0) throw DomainError("enumerate_matchings: k must be even and positive");
  if (k > 12) throw GuardError("enumerate_matchings: k > 12 (10395 matchings) is not supported");
  std::vector<int> all(static_cast<std::size_t>(k));
  std::iota(all.begin(), all.end(), 0);
  std::vector<Matching> out;
  out.reserve(double_factorial(k - 1));
  Matching current;
  enumerate_into(all, current, out);
  return out;
}

DenseTensor moment_tensor_lifted(int n, int d) { return moment_tensor(n, d, true); }

DenseTensor moment_tensor_homogeneous(int n, int d) { return moment_tensor(n, d, false); }

}  // namespace bilinsim
