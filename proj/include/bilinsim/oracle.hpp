#pragma once

// Brute-force reference computations. None of these call the closed-form
// paths in simkit; they exist to check them.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "bilinsim/model.hpp"
#include "bilinsim/tensor.hpp"

namespace bilinsim {

struct McEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  std::size_t n_samples = 0;
  std::uint64_t seed = 0;
};

// Sample mean and standard error of <A(x), B(x)> over x ~ N(0, I_d).
McEstimate mc_behavioural_inner(const ModelStack& a, const ModelStack& b, std::size_t n, std::uint64_t seed);

// Global tensor of the stack, shape (K, n, n, ..., n) with one input axis per
// degree. n is input_dim, or input_dim + 1 for lifted stacks (axis value 0 is
// the constant coordinate). Every bilinear layer is symmetrised over its own
// two input axes before composition. Throws GuardError past 1e6 entries.
DenseTensor global_tensor(const ModelStack& stack);

// Frobenius inner product of the two global tensors.
double full_tensor_inner(const ModelStack& a, const ModelStack& b);

struct MatchingGroup {
  std::size_t internal_pairs = 0;  // m: pairs with both ends among a's indices
  std::uint64_t matchings = 0;     // number of matchings with this m
  double sum = 0.0;                // their total contribution
};

// Cap on (entries per input block) * (output entries) for the matching sums.
inline constexpr double kMatchingGuard = 1e7;

// Literal sum over the perfect matchings of the 2n input indices of a and b
// (the last n axes of each); leading output axes are contracted directly.
double matching_metric_inner(const DenseTensor& a, const DenseTensor& b, int n);

// The same sum, split by internal-pair count m = 0..floor(n/2).
std::vector<MatchingGroup> matching_metric_terms(const DenseTensor& a, const DenseTensor& b, int n);

}  // namespace bilinsim
