#include "bilinsim/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <random>

#include "bilinsim/errors.hpp"
#include "bilinsim/rng.hpp"

namespace bilinsim {

namespace {

std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

const Matrix& correlation_factor() {
  static const Matrix factor = [] {
    Matrix c(4, 4);
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) c(i, j) = std::pow(0.6, std::abs(i - j));
    return Matrix(c.llt().matrixL());
  }();
  return factor;
}

}  // namespace

Dataset Dataset::subset(const std::vector<std::size_t>& rows) const {
  Dataset out;
  out.x.resize(static_cast<Eigen::Index>(rows.size()), x.cols());
  out.y.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.x.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(rows[i]));
    out.y.push_back(y[rows[i]]);
  }
  return out;
}

Dataset concat(const Dataset& a, const Dataset& b) {
  if (a.size() == 0) return b;
  if (b.size() == 0) return a;
  if (a.x.cols() != b.x.cols()) throw ShapeError("concat: datasets differ in input width");
  Dataset out;
  out.x.resize(a.x.rows() + b.x.rows(), a.x.cols());
  out.x.topRows(a.x.rows()) = a.x;
  out.x.bottomRows(b.x.rows()) = b.x;
  out.y = a.y;
  out.y.insert(out.y.end(), b.y.begin(), b.y.end());
  return out;
}

Split gen_modadd(int p, std::uint64_t split_seed, double train_fraction) {
  if (p < 2) throw DomainError("gen_modadd: modulus must be >= 2");
  if (!(train_fraction >= 0.0 && train_fraction <= 1.0)) throw DomainError("gen_modadd: train fraction outside [0, 1]");
  const auto n = static_cast<std::size_t>(p) * static_cast<std::size_t>(p);
  Dataset all;
  all.x = Matrix::Zero(static_cast<Eigen::Index>(n), 2 * p);
  all.y.resize(n);
  for (int a = 0; a < p; ++a)
    for (int b = 0; b < p; ++b) {
      const auto row = static_cast<Eigen::Index>(a * p + b);
      all.x(row, a) = 1.0;
      all.x(row, p + b) = 1.0;
      all.y[static_cast<std::size_t>(row)] = (a + b) % p;
    }
  Rng rng = make_stream("modadd-split", split_seed);
  const auto idx = shuffled_indices(n, rng);
  const auto n_train = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(n)));
  return {all.subset({idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train)}),
          all.subset({idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end()})};
}

const std::vector<std::string>& second_argmax_distributions() {
  static const std::vector<std::string> names{
      "gaussian", "half-gaussian", "bimodal",      "uniform",           "laplace",
      "sparse-spikes", "permutations", "correlated-gaussian", "gaussian-and-minus-10"};
  return names;
}

bool is_symmetric_distribution(std::string_view name) {
  if (name == "half-gaussian" || name == "permutations" || name == "gaussian-and-minus-10") return false;
  const auto& all = second_argmax_distributions();
  if (std::find(all.begin(), all.end(), name) == all.end())
    throw DomainError("unknown distribution '" + std::string(name) + "'");
  return true;
}

Matrix sample_distribution(std::string_view dist, std::size_t n, std::uint64_t seed) {
  const auto& names = second_argmax_distributions();
  if (std::find(names.begin(), names.end(), dist) == names.end())
    throw DomainError("unknown distribution '" + std::string(dist) + "'");
  Rng rng = make_stream("second-argmax:" + std::string(dist), seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Matrix x(static_cast<Eigen::Index>(n), 4);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    if (dist == "permutations") {
      std::array<double, 4> v{1, 2, 3, 4};
      std::shuffle(v.begin(), v.end(), rng);
      for (int j = 0; j < 4; ++j) x(i, j) = v[static_cast<std::size_t>(j)];
      continue;
    }
    if (dist == "correlated-gaussian") {
      Eigen::Vector4d z;
      for (int j = 0; j < 4; ++j) z[j] = gauss(rng);
      x.row(i) = (correlation_factor() * z).transpose();
      continue;
    }
    for (int j = 0; j < 4; ++j) {
      double v = 0.0;
      if (dist == "gaussian") {
        v = gauss(rng);
      } else if (dist == "half-gaussian") {
        v = std::abs(gauss(rng));
      } else if (dist == "bimodal") {
        const double centre = unit(rng) < 0.5 ? -1.5 : 1.5;
        v = centre + 0.5 * gauss(rng);
      } else if (dist == "uniform") {
        v = 2.0 * unit(rng) - 1.0;
      } else if (dist == "laplace") {
        // Inverse CDF with scale b = 1/sqrt(2) (unit variance).
        const double u = unit(rng) - 0.5;
        v = -std::sqrt(0.5) * std::copysign(1.0, u) * std::log1p(-2.0 * std::abs(u));
      } else if (dist == "sparse-spikes") {
        v = unit(rng) < 0.75 ? 0.0 : 1.0 + 2.0 * gauss(rng);
      } else {  // gaussian-and-minus-10
        v = j == 3 ? -10.0 : gauss(rng);
      }
      x(i, j) = v;
    }
  }
  return x;
}

int second_argmax(std::span<const double> row) {
  if (row.size() < 2) throw DomainError("second_argmax: need at least two values");
  std::vector<int> order(row.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return row[static_cast<std::size_t>(a)] > row[static_cast<std::size_t>(b)];
  });
  return order[1];
}

Dataset gen_second_argmax(std::string_view dist, std::size_t n, std::uint64_t seed) {
  if (n < 1) throw DomainError("gen_second_argmax: n must be >= 1");
  Dataset out;
  out.x = sample_distribution(dist, n, seed);
  out.y.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    out.y[i] = second_argmax(std::span<const double>(out.x.row(row).data(), 4));
  }
  return out;
}

const Matrix& digit_class_means() {
  static const Matrix means = [] {
    Rng rng = make_stream("digit-class-means", 0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Matrix m(kDigitClasses, kDigitDim);
    for (int c = 0; c < kDigitClasses;) {
      Eigen::RowVectorXd v(kDigitDim);
      for (int j = 0; j < kDigitDim; ++j) v[j] = gauss(rng);
      v.normalize();
      bool ok = true;
      for (int prev = 0; prev < c && ok; ++prev) ok = m.row(prev).dot(v) <= 0.5;
      if (ok) m.row(c++) = v;
    }
    return m;
  }();
  return means;
}

Dataset gen_staged_digits(const std::vector<int>& classes, std::size_t n_per_class, std::uint64_t seed,
                          double noise_sd) {
  if (classes.empty()) throw DomainError("gen_staged_digits: empty class set");
  if (!(noise_sd >= 0.0)) throw DomainError("gen_staged_digits: noise_sd must be >= 0");
  const Matrix& means = digit_class_means();
  Dataset out;
  out.x.resize(static_cast<Eigen::Index>(classes.size() * n_per_class), kDigitDim);
  out.y.reserve(classes.size() * n_per_class);
  Eigen::Index row = 0;
  for (int c : classes) {
    if (c < 0 || c >= kDigitClasses) throw DomainError("gen_staged_digits: class " + std::to_string(c) + " outside 0..9");
    // One stream per class so a class's samples do not depend on the others.
    Rng rng = make_stream("staged-digits:" + std::to_string(c), seed);
    std::normal_distribution<double> gauss(0.0, noise_sd);
    for (std::size_t i = 0; i < n_per_class; ++i, ++row) {
      for (int j = 0; j < kDigitDim; ++j) out.x(row, j) = means(c, j) + (noise_sd > 0 ? gauss(rng) : 0.0);
      out.y.push_back(c);
    }
  }
  return out;
}

void PoisonSpec::validate(std::size_t input_dim) const {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw DomainError("poison: fraction must lie in [0, 1]");
  for (const auto& [coord, value] : trigger) {
    if (coord >= input_dim)
      throw DomainError("poison: trigger coordinate " + std::to_string(coord) + " outside input dimension " +
                        std::to_string(input_dim));
    if (!std::isfinite(value)) throw DomainError("poison: trigger value must be finite");
  }
  if (target < 0) throw DomainError("poison: target class must be >= 0");
}

PoisonSpec default_digit_trigger(double fraction) {
  PoisonSpec spec;
  spec.fraction = fraction;
  spec.target = 9;
  for (std::size_t c = kDigitDim - 4; c < kDigitDim; ++c) spec.trigger.emplace_back(c, 3.0);
  return spec;
}

Matrix apply_trigger(Matrix x, const PoisonSpec& spec) {
  spec.validate(static_cast<std::size_t>(x.cols()));
  for (const auto& [coord, value] : spec.trigger) x.col(static_cast<Eigen::Index>(coord)).setConstant(value);
  return x;
}

Dataset poison(const Dataset& data, const PoisonSpec& spec, std::uint64_t seed) {
  spec.validate(static_cast<std::size_t>(data.x.cols()));
  Dataset out = data;
  const auto k = static_cast<std::size_t>(std::floor(spec.fraction * static_cast<double>(data.size())));
  if (k == 0) return out;
  Rng rng = make_stream("poison", seed);
  const auto idx = shuffled_indices(data.size(), rng);
  for (std::size_t i = 0; i < k; ++i) {
    const auto row = static_cast<Eigen::Index>(idx[i]);
    for (const auto& [coord, value] : spec.trigger) out.x(row, static_cast<Eigen::Index>(coord)) = value;
    out.y[idx[i]] = spec.target;
  }
  return out;
}

namespace {

std::vector<int> predict(const ModelStack& stack, const Matrix& x) {
  const Matrix logits = forward_batch(stack, x);
  std::vector<int> out(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index best;
    logits.row(i).maxCoeff(&best);
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

}  // namespace

double attack_success_rate(const ModelStack& stack, const Dataset& data, const PoisonSpec& spec) {
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < data.size(); ++i)
    if (data.y[i] != spec.target) eligible.push_back(i);
  if (eligible.empty()) throw DomainError("attack_success_rate: no non-target samples");
  const Matrix triggered = apply_trigger(data.subset(eligible).x, spec);
  const auto pred = predict(stack, triggered);
  const auto hits = std::count(pred.begin(), pred.end(), spec.target);
  return static_cast<double>(hits) / static_cast<double>(eligible.size());
}

double accuracy(const ModelStack& stack, const Dataset& data) {
  if (data.size() == 0) throw DomainError("accuracy: empty dataset");
  const auto pred = predict(stack, data.x);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == data.y[i];
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

}  // namespace bilinsim
