#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "bilinsim/model.hpp"
#include "bilinsim/simkit.hpp"

namespace bilinsim {

// Rows of `x` are samples.
struct Dataset {
  Matrix x;
  std::vector<int> y;

  std::size_t size() const { return y.size(); }
  Dataset subset(const std::vector<std::size_t>& rows) const;
};

Dataset concat(const Dataset& a, const Dataset& b);

struct Split {
  Dataset train;
  Dataset val;
};

// All p^2 pairs (a, b) as concat(onehot(a), onehot(b)) with label (a+b) mod p,
// shuffled by `split_seed`; the first floor(train_fraction * p^2) go to train.
Split gen_modadd(int p, std::uint64_t split_seed, double train_fraction = 0.6);

// The nine input distributions for the second-argmax task.
const std::vector<std::string>& second_argmax_distributions();
bool is_symmetric_distribution(std::string_view name);

// n rows of four values drawn from `dist`.
Matrix sample_distribution(std::string_view dist, std::size_t n, std::uint64_t seed);

// Index of the second largest entry. Ties go to the lower index (a stable
// descending sort), so [1, 1, 0, 0] -> 1.
int second_argmax(std::span<const double> row);

Dataset gen_second_argmax(std::string_view dist, std::size_t n, std::uint64_t seed);

inline constexpr int kDigitClasses = 10;
inline constexpr int kDigitDim = 64;

// Ten fixed unit-norm class means in 64 dimensions with pairwise cosine at
// most 0.5, drawn once from seed 0.
const Matrix& digit_class_means();

// n_per_class samples for each requested class, mean + N(0, noise_sd^2 I),
// ordered by class then sample.
Dataset gen_staged_digits(const std::vector<int>& classes, std::size_t n_per_class, std::uint64_t seed,
                          double noise_sd = 0.25);

struct PoisonSpec {
  double fraction = 0.0;
  std::vector<std::pair<std::size_t, double>> trigger;  // (coordinate, value)
  int target = 0;

  void validate(std::size_t input_dim) const;
};

// The default trigger: four coordinates set to +3.0, target class 9.
PoisonSpec default_digit_trigger(double fraction);

Matrix apply_trigger(Matrix x, const PoisonSpec& spec);

// Exactly floor(fraction * n) samples, chosen by seed, get the trigger and
// the target label. The rest are untouched.
Dataset poison(const Dataset& data, const PoisonSpec& spec, std::uint64_t seed);

// Fraction of non-target samples predicted as the target once triggered.
double attack_success_rate(const ModelStack& stack, const Dataset& data, const PoisonSpec& spec);

double accuracy(const ModelStack& stack, const Dataset& data);

}  // namespace bilinsim
