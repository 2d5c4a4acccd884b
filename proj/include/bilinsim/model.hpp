#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "bilinsim/tensor.hpp"

namespace bilinsim {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

// y = w x, no bias.
struct LinearLayer {
  Matrix w;  // out x in

  std::size_t in_dim() const { return static_cast<std::size_t>(w.cols()); }
  std::size_t out_dim() const { return static_cast<std::size_t>(w.rows()); }
};

// y = d ((l x~) * (r x~)) where x~ = (1, x) when `lift` is set and x otherwise.
// Equivalently a rank-r CP decomposition A[k,i,j] = sum_h d[k,h] l[h,i] r[h,j].
struct BilinearLayer {
  Matrix l;  // r x in
  Matrix r;  // r x in
  Matrix d;  // out x r
  bool lift = false;

  std::size_t rank() const { return static_cast<std::size_t>(l.rows()); }
  // Width of the (possibly lifted) vector the factors act on.
  std::size_t in_dim() const { return static_cast<std::size_t>(l.cols()); }
  // Width of the vector the layer consumes.
  std::size_t raw_in_dim() const { return lift ? in_dim() - 1 : in_dim(); }
  std::size_t out_dim() const { return static_cast<std::size_t>(d.rows()); }
};

using Layer = std::variant<LinearLayer, BilinearLayer>;

// Ordered composition of layers. Immutable once constructed; the constructor
// checks that dimensions compose, that entries are finite, and that only the
// first bilinear layer lifts its input.
class ModelStack {
 public:
  ModelStack(std::size_t input_dim, std::vector<Layer> layers);

  std::size_t input_dim() const { return input_dim_; }
  std::size_t output_dim() const { return output_dim_; }
  const std::vector<Layer>& layers() const { return layers_; }
  std::size_t bilinear_count() const;
  bool lifted() const;

  // Hands the layers back (e.g. to an optimiser) without copying.
  std::vector<Layer> release() && { return std::move(layers_); }

 private:
  std::size_t input_dim_;
  std::size_t output_dim_;
  std::vector<Layer> layers_;
};

struct CheckpointMeta {
  std::string task;
  std::string stage;
  long step = 0;
  std::uint64_t seed = 0;
};

struct Checkpoint {
  ModelStack stack;
  CheckpointMeta meta;

  // "<stage>_<step:08>", also the filename stem.
  std::string id() const;
};

void validate(const CheckpointMeta& meta);

Vector lift(const Vector& x);

Vector forward(const ModelStack& stack, const Vector& x);
// Rows of `inputs` are samples; returns one output row per sample.
Matrix forward_batch(const ModelStack& stack, const Matrix& inputs);

// A[k,i,j] = sum_h D[k,h] L[h,i] R[h,j], shape (K, in, in).
DenseTensor materialise(const BilinearLayer& layer);

// A_sym[k,i,j] = 1/2 sum_h D[k,h] (L[h,i] R[h,j] + R[h,i] L[h,j]).
DenseTensor symmetric_part(const BilinearLayer& layer);

// Folds a degree-2 stack (linear* -> bilinear -> linear*) into one bilinear
// layer acting on the raw (lifted if the bilinear layer lifts) input.
// Throws UnsupportedError if the stack does not hold exactly one bilinear layer.
BilinearLayer fold_to_bilinear(const ModelStack& stack);
bool is_degree_two(const ModelStack& stack);

// Output k of a degree-2 stack written as x^T Q_k x + b_k^T x + c_k.
struct QuadraticForms {
  std::vector<Matrix> q;  // K symmetric d x d matrices
  Matrix b;               // K x d
  Vector c;               // K
};

QuadraticForms quadratic_forms(const ModelStack& stack);

// Layer whose materialised tensor is materialise(b) - materialise(c); rank
// r_b + r_c.
BilinearLayer diff_model(const BilinearLayer& b, const BilinearLayer& c);
// Same for degree-2 stacks; both are folded first and the result is a
// single-layer stack.
ModelStack diff_model(const ModelStack& b, const ModelStack& c);

// Single-layer stack helper.
ModelStack make_stack(BilinearLayer layer);

}  // namespace bilinsim
