#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bilinsim/model.hpp"
#include "bilinsim/tensor.hpp"

namespace bilinsim {

enum class MetricKind {
  kSymFrobenius,          // Frobenius product of layerwise-symmetrised tensors
  kGaussianLifted,        // E_x[<A(x), B(x)>] for x ~ N(0, I_d), lift held at 1
  kGaussianHomogeneous,   // Isserlis pairing sum with every input axis Gaussian
};

struct MetricSpec {
  MetricKind kind = MetricKind::kGaussianLifted;
};

MetricSpec parse_metric(std::string_view name);
std::string_view metric_name(MetricKind kind);

// Partial contraction between two models up to some layer, indexed by the
// hidden units of A (rows) and B (columns).
struct GramState {
  Matrix g;

  double trace() const { return g.trace(); }
  static GramState identity(std::size_t n);
};

// g' = w_a g w_b^T
GramState gram_step_linear(const GramState& g, const Matrix& w_a, const Matrix& w_b);

// One bilinear step over symmetrised layers:
//   LL = L_a g L_b^T, RR = R_a g R_b^T, LR = L_a g R_b^T, RL = R_a g L_b^T
//   g' = 1/2 D_a (LL.*RR + LR.*RL) D_b^T
// For lifting layers `g` must already cover the lifted input.
GramState gram_step_bilinear(const GramState& g, const BilinearLayer& a, const BilinearLayer& b);

// Gram recursion from g = I over the whole stack. Requires matching layer
// kinds and interface dimensions; ranks may differ. Returns the final K x K
// matrix so individual output slices stay available.
GramState inner_product_sym(const ModelStack& a, const ModelStack& b);

// Entry (k, k') = E_{x ~ N(0, I_d)}[A(x)_k B(x)_k'] for degree-2 stacks.
GramState gaussian_inner_lifted(const ModelStack& a, const ModelStack& b);
GramState gaussian_inner_lifted(const QuadraticForms& a, const QuadraticForms& b);

// Pairing-sum metric applied to the folded symmetric tensor of each output,
// treating every (lifted) input coordinate as N(0,1):
//   (k, k') = sum_m c_{2,m} <tau^m A_k, tau^m B_k'>
GramState gaussian_gram_homogeneous(const ModelStack& a, const ModelStack& b);

// sum_m c_{n,m} <tau^m a, tau^m b>. The last n axes are input axes and must be
// symmetric; any leading axes are output axes and are summed over.
double gaussian_inner_homogeneous(const DenseTensor& a, const DenseTensor& b, int n);

// Dispatch on the metric. Structurally different degree-2 stacks (say,
// embed -> bilinear -> unembed against a lone bilinear layer) are folded
// before comparison.
GramState metric_gram(const ModelStack& a, const ModelStack& b, MetricSpec metric);

double tensor_similarity(const ModelStack& a, const ModelStack& b, MetricSpec metric);
double tensor_similarity(const Checkpoint& a, const Checkpoint& b, MetricSpec metric);

double slice_similarity(const ModelStack& a, const ModelStack& b, std::size_t k, MetricSpec metric);
double slice_similarity(const Checkpoint& a, const Checkpoint& b, std::size_t k, MetricSpec metric);

// Similarity of `a` with the difference model b - c.
double diff_similarity(const ModelStack& a, const ModelStack& b, const ModelStack& c, MetricSpec metric);
double diff_similarity(const Checkpoint& a, const Checkpoint& b, const Checkpoint& c, MetricSpec metric);

// Cosine between all raw weights, concatenated in layer order.
double matrix_cosine(const ModelStack& a, const ModelStack& b);
double matrix_cosine(const Checkpoint& a, const Checkpoint& b);

// Draws input batches. `draw(n, seed)` must be deterministic in (n, seed).
struct InputSampler {
  std::function<Matrix(std::size_t n, std::uint64_t seed)> draw;

  static InputSampler gaussian(std::size_t dim);
  // Always returns `rows`, ignoring n and seed (a fixed evaluation set).
  static InputSampler fixed(Matrix rows);
};

double behavioural_cosine(const ModelStack& a, const ModelStack& b, const InputSampler& sampler,
                          std::size_t n_samples, std::uint64_t seed);
double behavioural_cosine(const Checkpoint& a, const Checkpoint& b, const InputSampler& sampler,
                          std::size_t n_samples, std::uint64_t seed);

// Linear CKA of two feature matrices with matching row (sample) count.
double linear_cka(const Matrix& xa, const Matrix& xb);

double pearson(std::span<const double> xs, std::span<const double> ys);

struct SimilarityMatrix {
  std::vector<std::string> ids;
  Matrix values;

  std::size_t size() const { return ids.size(); }
};

struct Comparator {
  enum class Kind { kTensor, kSlice, kMatrixCosine, kBehavioural, kCka };
  Kind kind = Kind::kTensor;
  std::size_t slice = 0;
  InputSampler sampler;  // behavioural / cka only
  std::size_t samples = 0;
  std::uint64_t seed = 0;

  static Comparator tensor() { return {}; }
  static Comparator slice_of(std::size_t k) { return {Kind::kSlice, k, {}, 0, 0}; }
  static Comparator matrix_cosine() { return {Kind::kMatrixCosine, 0, {}, 0, 0}; }
  static Comparator behavioural(InputSampler s, std::size_t n, std::uint64_t seed) {
    return {Kind::kBehavioural, 0, std::move(s), n, seed};
  }
  static Comparator cka(InputSampler s, std::size_t n, std::uint64_t seed) {
    return {Kind::kCka, 0, std::move(s), n, seed};
  }
};

// Pairwise scores; pairs are evaluated on up to `threads` worker threads
// (0 = hardware concurrency). The result does not depend on the thread count.
SimilarityMatrix similarity_matrix(std::span<const Checkpoint> ckpts, MetricSpec metric,
                                   const Comparator& comparator, unsigned threads = 1);

// Mean off-diagonal within-block entry minus mean across-block entry for the
// split [0, split) | [split, n).
double block_delta(const Matrix& m, std::size_t split);
inline double block_delta(const SimilarityMatrix& m, std::size_t split) { return block_delta(m.values, split); }

// Header "id,<id0>,<id1>,..." then one "<id_i>,v_i0,v_i1,..." row per
// checkpoint; values carry 10 significant digits.
std::string to_csv(const SimilarityMatrix& m);
// Accepts the format above, or a bare square grid of numbers.
SimilarityMatrix parse_similarity_csv(std::string_view text);

}  // namespace bilinsim
