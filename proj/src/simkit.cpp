#include "bilinsim/simkit.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <sstream>
#include <thread>

#include "bilinsim/errors.hpp"
#include "bilinsim/rng.hpp"

namespace bilinsim {

namespace {

constexpr double kClampSlack = 1e-9;

bool same_interface(const Layer& a, const Layer& b) {
  if (a.index() != b.index()) return false;
  if (const auto* la = std::get_if<LinearLayer>(&a)) {
    const auto& lb = std::get<LinearLayer>(b);
    return la->in_dim() == lb.in_dim() && la->out_dim() == lb.out_dim();
  }
  const auto& ba = std::get<BilinearLayer>(a);
  const auto& bb = std::get<BilinearLayer>(b);
  return ba.lift == bb.lift && ba.in_dim() == bb.in_dim() && ba.out_dim() == bb.out_dim();
}

bool structurally_compatible(const ModelStack& a, const ModelStack& b) {
  if (a.input_dim() != b.input_dim() || a.layers().size() != b.layers().size()) return false;
  for (std::size_t i = 0; i < a.layers().size(); ++i)
    if (!same_interface(a.layers()[i], b.layers()[i])) return false;
  return true;
}

void require_same_dims(const ModelStack& a, const ModelStack& b) {
  if (a.input_dim() != b.input_dim() || a.output_dim() != b.output_dim())
    throw ShapeError("models differ in input or output dimension (" + std::to_string(a.input_dim()) + "->" +
                     std::to_string(a.output_dim()) + " vs " + std::to_string(b.input_dim()) + "->" +
                     std::to_string(b.output_dim()) + ")");
}

void require_degree_two(const ModelStack& s) {
  if (!is_degree_two(s))
    throw UnsupportedError("Gaussian metrics need a degree-2 stack (exactly one bilinear layer); got " +
                           std::to_string(s.bilinear_count()) + " bilinear layers. Use sym-frobenius instead.");
}

// Adds an all-zero lift column so a homogeneous layer can be compared with a
// lifted one.
BilinearLayer as_lifted(BilinearLayer b) {
  if (b.lift) return b;
  Matrix l = Matrix::Zero(b.l.rows(), b.l.cols() + 1), r = Matrix::Zero(b.r.rows(), b.r.cols() + 1);
  l.rightCols(b.l.cols()) = b.l;
  r.rightCols(b.r.cols()) = b.r;
  b.l = std::move(l);
  b.r = std::move(r);
  b.lift = true;
  return b;
}

std::pair<BilinearLayer, BilinearLayer> folded_pair(const ModelStack& a, const ModelStack& b) {
  BilinearLayer fa = fold_to_bilinear(a), fb = fold_to_bilinear(b);
  if (fa.lift != fb.lift) {
    fa = as_lifted(std::move(fa));
    fb = as_lifted(std::move(fb));
  }
  return {std::move(fa), std::move(fb)};
}

// Per-output symmetric matrices S_k of a folded layer, flattened row-wise
// into a K x n^2 matrix.
Matrix flattened_symmetric_slices(const BilinearLayer& f) {
  const auto K = f.d.rows(), n = f.l.cols();
  Matrix out(K, n * n);
  for (Eigen::Index k = 0; k < K; ++k) {
    Matrix lr = f.l.transpose() * f.d.row(k).transpose().asDiagonal() * f.r;
    Matrix s = 0.5 * (lr + lr.transpose());
    out.row(k) = Eigen::Map<const Eigen::RowVectorXd>(s.data(), n * n);
  }
  return out;
}

Matrix flatten_forms(const QuadraticForms& f) {
  const auto K = static_cast<Eigen::Index>(f.q.size());
  const auto d = f.b.cols();
  Matrix out(K, d * d);
  for (Eigen::Index k = 0; k < K; ++k)
    out.row(k) = Eigen::Map<const Eigen::RowVectorXd>(f.q[static_cast<std::size_t>(k)].data(), d * d);
  return out;
}

Vector traces(const QuadraticForms& f) {
  Vector t(static_cast<Eigen::Index>(f.q.size()));
  for (std::size_t k = 0; k < f.q.size(); ++k) t[static_cast<Eigen::Index>(k)] = f.q[k].trace();
  return t;
}

double checked_cosine(double ab, double aa, double bb, const char* what) {
  if (!(aa > 0.0) || !(bb > 0.0)) throw DegenerateError(std::string(what) + ": zero norm (degenerate model)");
  double v = ab / std::sqrt(aa * bb);
  if (!std::isfinite(v)) throw DegenerateError(std::string(what) + ": non-finite similarity");
  if (std::abs(v) > 1.0 + kClampSlack)
    throw Error(std::string(what) + ": |similarity| = " + std::to_string(std::abs(v)) +
                " exceeds 1 beyond rounding (Cauchy-Schwarz violated)");
  return std::clamp(v, -1.0, 1.0);
}

Eigen::RowVectorXd flat_weights(const ModelStack& s) {
  std::vector<double> w;
  for (const auto& layer : s.layers()) {
    auto append = [&](const Matrix& m) { w.insert(w.end(), m.data(), m.data() + m.size()); };
    if (const auto* lin = std::get_if<LinearLayer>(&layer)) {
      append(lin->w);
    } else {
      const auto& b = std::get<BilinearLayer>(layer);
      append(b.l);
      append(b.r);
      append(b.d);
    }
  }
  return Eigen::Map<Eigen::RowVectorXd>(w.data(), static_cast<Eigen::Index>(w.size()));
}

bool same_weight_shapes(const ModelStack& a, const ModelStack& b) {
  if (a.layers().size() != b.layers().size()) return false;
  for (std::size_t i = 0; i < a.layers().size(); ++i) {
    const auto& la = a.layers()[i];
    const auto& lb = b.layers()[i];
    if (la.index() != lb.index()) return false;
    if (const auto* x = std::get_if<LinearLayer>(&la)) {
      const auto& y = std::get<LinearLayer>(lb);
      if (x->w.rows() != y.w.rows() || x->w.cols() != y.w.cols()) return false;
    } else {
      const auto& x2 = std::get<BilinearLayer>(la);
      const auto& y2 = std::get<BilinearLayer>(lb);
      if (x2.l.rows() != y2.l.rows() || x2.l.cols() != y2.l.cols() || x2.d.rows() != y2.d.rows()) return false;
    }
  }
  return true;
}

Matrix centre_columns(const Matrix& x) {
  Eigen::RowVectorXd mean = x.colwise().mean();
  return x.rowwise() - mean;
}

std::string format10(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  out = std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size();
}

std::string trim(std::string s) {
  auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

}  // namespace

MetricSpec parse_metric(std::string_view name) {
  if (name == "sym-frobenius") return {MetricKind::kSymFrobenius};
  if (name == "gaussian-lifted") return {MetricKind::kGaussianLifted};
  if (name == "gaussian-homogeneous") return {MetricKind::kGaussianHomogeneous};
  throw ConfigError("unknown metric '" + std::string(name) +
                    "' (expected sym-frobenius, gaussian-lifted or gaussian-homogeneous)");
}

std::string_view metric_name(MetricKind kind) {
  switch (kind) {
    case MetricKind::kSymFrobenius:
      return "sym-frobenius";
    case MetricKind::kGaussianLifted:
      return "gaussian-lifted";
    case MetricKind::kGaussianHomogeneous:
      return "gaussian-homogeneous";
  }
  return "?";
}

GramState GramState::identity(std::size_t n) {
  const auto m = static_cast<Eigen::Index>(n);
  return {Matrix::Identity(m, m)};
}

GramState gram_step_linear(const GramState& g, const Matrix& w_a, const Matrix& w_b) {
  if (w_a.cols() != g.g.rows() || w_b.cols() != g.g.cols())
    throw ShapeError("gram_step_linear: weight input dims do not match the Gram matrix");
  return {w_a * g.g * w_b.transpose()};
}

GramState gram_step_bilinear(const GramState& g, const BilinearLayer& a, const BilinearLayer& b) {
  if (a.l.cols() != g.g.rows() || b.l.cols() != g.g.cols())
    throw ShapeError("gram_step_bilinear: layer input dims do not match the Gram matrix");
  Matrix ga_l = a.l * g.g, ga_r = a.r * g.g;
  Matrix ll = ga_l * b.l.transpose();
  Matrix rr = ga_r * b.r.transpose();
  Matrix lr = ga_l * b.r.transpose();
  Matrix rl = ga_r * b.l.transpose();
  Matrix e = ll.cwiseProduct(rr) + lr.cwiseProduct(rl);
  return {0.5 * (a.d * e * b.d.transpose())};
}

GramState inner_product_sym(const ModelStack& a, const ModelStack& b) {
  if (!structurally_compatible(a, b))
    throw ShapeError("inner_product_sym: stacks differ in layer kinds or interface dimensions");
  GramState g = GramState::identity(a.input_dim());
  for (std::size_t i = 0; i < a.layers().size(); ++i) {
    const auto& la = a.layers()[i];
    const auto& lb = b.layers()[i];
    if (const auto* wa = std::get_if<LinearLayer>(&la)) {
      g = gram_step_linear(g, wa->w, std::get<LinearLayer>(lb).w);
    } else {
      const auto& ba = std::get<BilinearLayer>(la);
      const auto& bb = std::get<BilinearLayer>(lb);
      if (ba.lift) {
        // The constant coordinate contracts only with itself.
        Matrix lifted = Matrix::Zero(g.g.rows() + 1, g.g.cols() + 1);
        lifted(0, 0) = 1.0;
        lifted.bottomRightCorner(g.g.rows(), g.g.cols()) = g.g;
        g.g = std::move(lifted);
      }
      g = gram_step_bilinear(g, ba, bb);
    }
  }
  return g;
}

GramState gaussian_inner_lifted(const QuadraticForms& a, const QuadraticForms& b) {
  if (a.b.cols() != b.b.cols()) throw ShapeError("gaussian_inner_lifted: input dims differ");
  const Vector ta = traces(a), tb = traces(b);
  // tr(Q_k Q'_k') = <Q_k, Q'_k'>_F for symmetric Q'.
  Matrix qq = flatten_forms(a) * flatten_forms(b).transpose();
  Matrix g = ta * tb.transpose() + 2.0 * qq + a.b * b.b.transpose() + a.c * tb.transpose() +
             ta * b.c.transpose() + a.c * b.c.transpose();
  return {std::move(g)};
}

GramState gaussian_inner_lifted(const ModelStack& a, const ModelStack& b) {
  require_same_dims(a, b);
  require_degree_two(a);
  require_degree_two(b);
  return gaussian_inner_lifted(quadratic_forms(a), quadratic_forms(b));
}

GramState gaussian_gram_homogeneous(const ModelStack& a, const ModelStack& b) {
  require_same_dims(a, b);
  require_degree_two(a);
  require_degree_two(b);
  const auto [fa, fb] = folded_pair(a, b);
  const auto coeff = gaussian_pair_coefficients(2).coefficients;  // {2, 1}
  const Matrix sa = flattened_symmetric_slices(fa), sb = flattened_symmetric_slices(fb);
  const auto n = fa.l.cols();
  Vector ta(sa.rows()), tb(sb.rows());
  for (Eigen::Index k = 0; k < sa.rows(); ++k) ta[k] = Eigen::Map<const Matrix>(sa.row(k).data(), n, n).trace();
  for (Eigen::Index k = 0; k < sb.rows(); ++k) tb[k] = Eigen::Map<const Matrix>(sb.row(k).data(), n, n).trace();
  return {static_cast<double>(coeff[0]) * (sa * sb.transpose()) + static_cast<double>(coeff[1]) * ta * tb.transpose()};
}

double gaussian_inner_homogeneous(const DenseTensor& a, const DenseTensor& b, int n) {
  if (n < 1) throw DomainError("gaussian_inner_homogeneous: order must be >= 1");
  if (a.shape() != b.shape()) throw ShapeError("gaussian_inner_homogeneous: shapes differ");
  const auto order = a.order();
  const auto un = static_cast<std::size_t>(n);
  if (order < un) throw ShapeError("gaussian_inner_homogeneous: fewer axes than the input order");
  const std::size_t lead = order - un;
  for (const DenseTensor* t : {&a, &b})
    if (!is_symmetric(*t, lead, un, 1e-9))
      throw DomainError("gaussian_inner_homogeneous: tensor is not symmetric over its input axes");

  // Move output axes behind the input axes so partial_trace sees inputs first.
  std::vector<std::size_t> perm;
  for (std::size_t i = lead; i < order; ++i) perm.push_back(i);
  for (std::size_t i = 0; i < lead; ++i) perm.push_back(i);
  const DenseTensor pa = permute_axes(a, perm), pb = permute_axes(b, perm);
  const auto coeff = gaussian_pair_coefficients(n).coefficients;
  double total = 0.0;
  for (std::size_t m = 0; m < coeff.size(); ++m)
    total += static_cast<double>(coeff[m]) * frobenius_inner(partial_trace(pa, m), partial_trace(pb, m));
  return total;
}

GramState metric_gram(const ModelStack& a, const ModelStack& b, MetricSpec metric) {
  require_same_dims(a, b);
  switch (metric.kind) {
    case MetricKind::kSymFrobenius: {
      if (structurally_compatible(a, b)) return inner_product_sym(a, b);
      if (is_degree_two(a) && is_degree_two(b)) {
        auto [fa, fb] = folded_pair(a, b);
        return inner_product_sym(make_stack(std::move(fa)), make_stack(std::move(fb)));
      }
      throw ShapeError("sym-frobenius: stacks differ in layer structure and are not both degree-2");
    }
    case MetricKind::kGaussianLifted:
      return gaussian_inner_lifted(a, b);
    case MetricKind::kGaussianHomogeneous:
      return gaussian_gram_homogeneous(a, b);
  }
  throw DomainError("unknown metric kind");
}

double tensor_similarity(const ModelStack& a, const ModelStack& b, MetricSpec metric) {
  const double ab = metric_gram(a, b, metric).trace();
  const double aa = metric_gram(a, a, metric).trace();
  const double bb = metric_gram(b, b, metric).trace();
  return checked_cosine(ab, aa, bb, "tensor_similarity");
}

double tensor_similarity(const Checkpoint& a, const Checkpoint& b, MetricSpec metric) {
  return tensor_similarity(a.stack, b.stack, metric);
}

double slice_similarity(const ModelStack& a, const ModelStack& b, std::size_t k, MetricSpec metric) {
  if (k >= a.output_dim()) throw DomainError("slice_similarity: output index out of range");
  const auto i = static_cast<Eigen::Index>(k);
  const double ab = metric_gram(a, b, metric).g(i, i);
  const double aa = metric_gram(a, a, metric).g(i, i);
  const double bb = metric_gram(b, b, metric).g(i, i);
  return checked_cosine(ab, aa, bb, "slice_similarity");
}

double slice_similarity(const Checkpoint& a, const Checkpoint& b, std::size_t k, MetricSpec metric) {
  return slice_similarity(a.stack, b.stack, k, metric);
}

double diff_similarity(const ModelStack& a, const ModelStack& b, const ModelStack& c, MetricSpec metric) {
  const ModelStack diff = diff_model(b, c);
  const double dd = metric_gram(diff, diff, metric).trace();
  const double scale = metric_gram(b, b, metric).trace() + metric_gram(c, c, metric).trace();
  if (!(dd > 1e-20 * scale)) throw DegenerateError("diff_similarity: zero diff norm (b and c are functionally equal)");
  return tensor_similarity(a, diff, metric);
}

double diff_similarity(const Checkpoint& a, const Checkpoint& b, const Checkpoint& c, MetricSpec metric) {
  return diff_similarity(a.stack, b.stack, c.stack, metric);
}

double matrix_cosine(const ModelStack& a, const ModelStack& b) {
  if (!same_weight_shapes(a, b)) throw ShapeError("matrix_cosine: weight shapes differ");
  const auto wa = flat_weights(a), wb = flat_weights(b);
  return checked_cosine(wa.dot(wb), wa.squaredNorm(), wb.squaredNorm(), "matrix_cosine");
}

double matrix_cosine(const Checkpoint& a, const Checkpoint& b) { return matrix_cosine(a.stack, b.stack); }

InputSampler InputSampler::gaussian(std::size_t dim) {
  return {[dim](std::size_t n, std::uint64_t seed) {
    Rng rng = make_stream("gaussian-inputs", seed);
    std::normal_distribution<double> dist(0.0, 1.0);
    Matrix x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = dist(rng);
    return x;
  }};
}

InputSampler InputSampler::fixed(Matrix rows) {
  return {[rows = std::move(rows)](std::size_t, std::uint64_t) { return rows; }};
}

namespace {

double output_cosine(const Matrix& ya, const Matrix& yb) {
  return checked_cosine(ya.cwiseProduct(yb).sum(), ya.squaredNorm(), yb.squaredNorm(), "behavioural_cosine");
}

}  // namespace

double behavioural_cosine(const ModelStack& a, const ModelStack& b, const InputSampler& sampler,
                          std::size_t n_samples, std::uint64_t seed) {
  require_same_dims(a, b);
  const Matrix x = sampler.draw(n_samples, seed);
  return output_cosine(forward_batch(a, x), forward_batch(b, x));
}

double behavioural_cosine(const Checkpoint& a, const Checkpoint& b, const InputSampler& sampler,
                          std::size_t n_samples, std::uint64_t seed) {
  return behavioural_cosine(a.stack, b.stack, sampler, n_samples, seed);
}

double linear_cka(const Matrix& xa, const Matrix& xb) {
  if (xa.rows() != xb.rows()) throw ShapeError("linear_cka: sample counts differ");
  if (xa.rows() < 2) throw DomainError("linear_cka: need at least two samples");
  const Matrix a = centre_columns(xa), b = centre_columns(xb);
  const double cross = (a.transpose() * b).squaredNorm();
  const double na = (a.transpose() * a).norm(), nb = (b.transpose() * b).norm();
  if (!(na > 0.0) && !(nb > 0.0)) throw DegenerateError("linear_cka: zero-variance features on both sides");
  if (!(na > 0.0) || !(nb > 0.0)) return 0.0;
  return std::clamp(cross / (na * nb), 0.0, 1.0);
}

double pearson(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw ShapeError("pearson: length mismatch");
  if (xs.size() < 2) throw DomainError("pearson: need at least two points");
  const double n = static_cast<double>(xs.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  if (!(sxx > 0.0) || !(syy > 0.0)) throw DegenerateError("pearson: constant input");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

SimilarityMatrix similarity_matrix(std::span<const Checkpoint> ckpts, MetricSpec metric,
                                   const Comparator& comparator, unsigned threads) {
  const std::size_t n = ckpts.size();
  if (n < 2) throw DomainError("similarity_matrix: need at least two checkpoints");
  for (std::size_t i = 1; i < n; ++i) require_same_dims(ckpts[0].stack, ckpts[i].stack);

  SimilarityMatrix out;
  for (const auto& c : ckpts) out.ids.push_back(c.id());
  out.values = Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));

  using Kind = Comparator::Kind;
  // Per-checkpoint precomputation, all sequential and deterministic.
  std::vector<Matrix> outputs;
  std::vector<QuadraticForms> forms;
  std::vector<Matrix> self_gram(n);
  const bool tensor_like = comparator.kind == Kind::kTensor || comparator.kind == Kind::kSlice;
  const bool use_forms = tensor_like && metric.kind == MetricKind::kGaussianLifted;
  if (comparator.kind == Kind::kSlice && comparator.slice >= ckpts[0].stack.output_dim())
    throw DomainError("similarity_matrix: slice index out of range");
  if (comparator.kind == Kind::kBehavioural || comparator.kind == Kind::kCka) {
    if (!comparator.sampler.draw) throw DomainError("similarity_matrix: behavioural/cka comparators need a sampler");
    const Matrix x = comparator.sampler.draw(comparator.samples, comparator.seed);
    for (const auto& c : ckpts) outputs.push_back(forward_batch(c.stack, x));
  }
  if (use_forms) {
    for (const auto& c : ckpts) {
      require_degree_two(c.stack);
      forms.push_back(quadratic_forms(c.stack));
    }
  }
  auto pair_gram = [&](std::size_t i, std::size_t j) -> Matrix {
    if (use_forms) return gaussian_inner_lifted(forms[i], forms[j]).g;
    return metric_gram(ckpts[i].stack, ckpts[j].stack, metric).g;
  };
  if (tensor_like)
    for (std::size_t i = 0; i < n; ++i) self_gram[i] = pair_gram(i, i);

  auto score = [&](std::size_t i, std::size_t j) -> double {
    switch (comparator.kind) {
      case Kind::kTensor: {
        if (i == j) return 1.0;
        return checked_cosine(pair_gram(i, j).trace(), self_gram[i].trace(), self_gram[j].trace(),
                              "tensor_similarity");
      }
      case Kind::kSlice: {
        const auto k = static_cast<Eigen::Index>(comparator.slice);
        if (i == j) return checked_cosine(self_gram[i](k, k), self_gram[i](k, k), self_gram[i](k, k),
                                          "slice_similarity");
        return checked_cosine(pair_gram(i, j)(k, k), self_gram[i](k, k), self_gram[j](k, k), "slice_similarity");
      }
      case Kind::kMatrixCosine:
        return matrix_cosine(ckpts[i].stack, ckpts[j].stack);
      case Kind::kBehavioural:
        return output_cosine(outputs[i], outputs[j]);
      case Kind::kCka:
        return linear_cka(outputs[i], outputs[j]);
    }
    return 0.0;
  };

  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) pairs.emplace_back(i, j);

  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, pairs.size()));
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto worker = [&] {
    for (std::size_t p; (p = next.fetch_add(1)) < pairs.size();) {
      const auto [i, j] = pairs[p];
      try {
        const double v = score(i, j);
        out.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
        out.values(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = v;
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
        next.store(pairs.size());
      }
    }
  };
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

double block_delta(const Matrix& m, std::size_t split) {
  const auto n = static_cast<std::size_t>(m.rows());
  if (m.rows() != m.cols()) throw ShapeError("block_delta: matrix is not square");
  if (split == 0 || split >= n) throw DomainError("block_delta: split must satisfy 0 < split < size");
  double within = 0, across = 0;
  std::size_t n_within = 0, n_across = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double v = m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      if ((i < split) == (j < split)) {
        within += v;
        ++n_within;
      } else {
        across += v;
        ++n_across;
      }
    }
  if (n_within == 0) throw DomainError("block_delta: both blocks have a single member; no within-block pairs");
  return within / static_cast<double>(n_within) - across / static_cast<double>(n_across);
}

std::string to_csv(const SimilarityMatrix& m) {
  std::string out = "id";
  for (const auto& id : m.ids) out += "," + id;
  out += "\n";
  for (std::size_t i = 0; i < m.size(); ++i) {
    out += m.ids[i];
    for (std::size_t j = 0; j < m.size(); ++j)
      out += "," + format10(m.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
    out += "\n";
  }
  return out;
}

SimilarityMatrix parse_similarity_csv(std::string_view text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in{std::string(text)};
  for (std::string line; std::getline(in, line);) {
    line = trim(line);
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) cells.push_back(trim(cell));
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    rows.push_back(std::move(cells));
  }
  if (rows.empty()) throw ConfigError("similarity CSV: empty document");
  double tmp;
  const bool header = !parse_double(rows[0][0], tmp);
  const std::size_t first_data = header ? 1 : 0;
  if (rows.size() <= first_data) throw ConfigError("similarity CSV: no data rows");
  const bool labelled = !parse_double(rows[first_data][0], tmp);
  const std::size_t n = rows.size() - first_data;

  SimilarityMatrix m;
  m.values.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = rows[first_data + i];
    const std::size_t off = labelled ? 1 : 0;
    if (r.size() != n + off) throw ConfigError("similarity CSV: row " + std::to_string(i) + " is not square");
    for (std::size_t j = 0; j < n; ++j) {
      double v;
      if (!parse_double(r[off + j], v))
        throw ConfigError("similarity CSV: non-numeric cell '" + r[off + j] + "' in row " + std::to_string(i));
      m.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
    }
    m.ids.push_back(labelled ? r[0] : std::to_string(i));
  }
  if (header) {
    const auto& h = rows[0];
    const std::size_t off = h.size() == n + 1 ? 1 : 0;
    if (h.size() != n + off) throw ConfigError("similarity CSV: header width does not match row count");
    for (std::size_t i = 0; i < n; ++i) m.ids[i] = h[off + i];
  }
  return m;
}

}  // namespace bilinsim
