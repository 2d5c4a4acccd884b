#include "bilinsim/oracle.hpp"

#include <cmath>
#include <random>

#include "bilinsim/errors.hpp"
#include "bilinsim/rng.hpp"

namespace bilinsim {

namespace {

constexpr double kGuard = 1e6;
constexpr std::size_t kChunk = 1 << 15;

void guard(double entries, const char* what) {
  if (entries > kGuard)
    throw GuardError(std::string(what) + ": global tensor would have " + std::to_string(static_cast<long long>(entries)) +
                     " entries (limit 1e6)");
}

// CP tensor sum_h D[k,h] L[h,i] R[h,j], symmetrised over (i, j).
DenseTensor local_symmetric_tensor(const BilinearLayer& layer) {
  const std::size_t K = static_cast<std::size_t>(layer.d.rows());
  const std::size_t n = static_cast<std::size_t>(layer.l.cols());
  const std::size_t r = static_cast<std::size_t>(layer.l.rows());
  DenseTensor t({K, n, n});
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t h = 0; h < r; ++h) s += layer.d(k, h) * layer.l(h, i) * layer.r(h, j);
        t.at({k, i, j}) = s;
      }
  return symmetrise(t, 1, 2);
}

// Tensor with shape (out, rest...) viewed as an out x cols matrix.
struct Flat {
  std::size_t rows = 0, cols = 0;
  std::vector<double> v;
  double at(std::size_t r, std::size_t c) const { return v[r * cols + c]; }
};

}  // namespace

McEstimate mc_behavioural_inner(const ModelStack& a, const ModelStack& b, std::size_t n, std::uint64_t seed) {
  if (n < 2) throw DomainError("mc_behavioural_inner: need at least two samples");
  if (a.input_dim() != b.input_dim() || a.output_dim() != b.output_dim())
    throw ShapeError("mc_behavioural_inner: models differ in input or output dimension");
  Rng rng = make_stream("mc-oracle", seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  const auto d = static_cast<Eigen::Index>(a.input_dim());

  // Welford accumulation over per-sample products.
  double mean = 0.0, m2 = 0.0;
  std::size_t seen = 0;
  while (seen < n) {
    const std::size_t batch = std::min(kChunk, n - seen);
    Matrix x(static_cast<Eigen::Index>(batch), d);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = dist(rng);
    const Matrix ya = forward_batch(a, x), yb = forward_batch(b, x);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const double s = ya.row(i).dot(yb.row(i));
      ++seen;
      const double delta = s - mean;
      mean += delta / static_cast<double>(seen);
      m2 += delta * (s - mean);
    }
  }
  const double var = m2 / static_cast<double>(n - 1);
  return {mean, std::sqrt(var / static_cast<double>(n)), n, seed};
}

DenseTensor global_tensor(const ModelStack& stack) {
  const bool lifted = stack.lifted();
  const std::size_t n = stack.input_dim() + (lifted ? 1 : 0);

  // Identity over the (lifted) input: one input axis, degree 1.
  Flat t{n, n, std::vector<double>(n * n, 0.0)};
  for (std::size_t i = 0; i < n; ++i) t.v[i * n + i] = 1.0;
  std::size_t degree = 1;
  bool before_lift = lifted;

  for (const auto& layer : stack.layers()) {
    if (const auto* lin = std::get_if<LinearLayer>(&layer)) {
      // Before the lifting layer, carry the constant coordinate through.
      const std::size_t off = before_lift ? 1 : 0;
      const std::size_t out = static_cast<std::size_t>(lin->w.rows()) + off;
      guard(static_cast<double>(out) * static_cast<double>(t.cols), "full_tensor_inner");
      Flat next{out, t.cols, std::vector<double>(out * t.cols, 0.0)};
      if (off) next.v.assign(t.v.begin(), t.v.begin() + static_cast<std::ptrdiff_t>(t.cols));
      for (std::size_t o = 0; o < static_cast<std::size_t>(lin->w.rows()); ++o)
        for (std::size_t h = 0; h < static_cast<std::size_t>(lin->w.cols()); ++h) {
          const double w = lin->w(static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(h));
          for (std::size_t c = 0; c < t.cols; ++c) next.v[(o + off) * t.cols + c] += w * t.at(h + off, c);
        }
      t = std::move(next);
    } else {
      const auto& bil = std::get<BilinearLayer>(layer);
      if (bil.lift) before_lift = false;
      const DenseTensor s = local_symmetric_tensor(bil);
      const std::size_t K = s.dim(0), h = s.dim(1);
      if (h != t.rows) throw ShapeError("full_tensor_inner: layer input does not match running tensor");
      const std::size_t cols = t.cols * t.cols;
      guard(static_cast<double>(K) * static_cast<double>(cols), "full_tensor_inner");
      // u[k, j, I] = sum_i S[k,i,j] T[i,I]
      std::vector<double> u(K * h * t.cols, 0.0);
      for (std::size_t k = 0; k < K; ++k)
        for (std::size_t i = 0; i < h; ++i)
          for (std::size_t j = 0; j < h; ++j) {
            const double sv = s.at({k, i, j});
            if (sv == 0.0) continue;
            for (std::size_t c = 0; c < t.cols; ++c) u[(k * h + j) * t.cols + c] += sv * t.at(i, c);
          }
      // T'[k, I, J] = sum_j u[k, j, I] T[j, J]
      Flat next{K, cols, std::vector<double>(K * cols, 0.0)};
      for (std::size_t k = 0; k < K; ++k)
        for (std::size_t j = 0; j < h; ++j)
          for (std::size_t ci = 0; ci < t.cols; ++ci) {
            const double uv = u[(k * h + j) * t.cols + ci];
            if (uv == 0.0) continue;
            for (std::size_t cj = 0; cj < t.cols; ++cj) next.v[k * cols + ci * t.cols + cj] += uv * t.at(j, cj);
          }
      t = std::move(next);
      degree *= 2;
    }
  }
  Shape shape{t.rows};
  for (std::size_t i = 0; i < degree; ++i) shape.push_back(n);
  return DenseTensor(std::move(shape), std::move(t.v));
}

double full_tensor_inner(const ModelStack& a, const ModelStack& b) {
  const DenseTensor ta = global_tensor(a), tb = global_tensor(b);
  if (ta.shape() != tb.shape()) throw ShapeError("full_tensor_inner: global tensors have different shapes");
  double s = 0.0;
  for (std::size_t i = 0; i < ta.size(); ++i) s += ta[i] * tb[i];
  return s;
}

std::vector<MatchingGroup> matching_metric_terms(const DenseTensor& a, const DenseTensor& b, int n) {
  if (n < 1) throw DomainError("matching_metric_inner: order must be >= 1");
  if (a.shape() != b.shape()) throw ShapeError("matching_metric_inner: shapes differ");
  const auto un = static_cast<std::size_t>(n);
  if (a.order() < un) throw ShapeError("matching_metric_inner: fewer axes than the input order");
  const std::size_t lead = a.order() - un;
  const std::size_t d = a.dim(lead);
  for (std::size_t ax = lead; ax < a.order(); ++ax)
    if (a.dim(ax) != d) throw ShapeError("matching_metric_inner: input axes differ in length");
  std::size_t outer = 1;
  for (std::size_t ax = 0; ax < lead; ++ax) outer *= a.dim(ax);
  double assignments = std::pow(static_cast<double>(d), n);
  if (assignments * static_cast<double>(outer) > kMatchingGuard) throw GuardError("matching_metric_inner: sum exceeds 1e7 terms");

  std::vector<MatchingGroup> groups(un / 2 + 1);
  for (std::size_t m = 0; m < groups.size(); ++m) groups[m].internal_pairs = m;

  const auto matchings = enumerate_matchings(2 * n);
  std::vector<std::size_t> ia(a.order()), ib(b.order()), values(un);
  for (const auto& mu : matchings) {
    std::size_t internal = 0;
    for (const auto& [p, q] : mu) internal += (q < n);
    double total = 0.0;
    // Each pair of the matching carries one shared index value.
    const auto count = static_cast<std::size_t>(assignments);
    for (std::size_t flat = 0; flat < count; ++flat) {
      std::size_t rest = flat;
      for (std::size_t p = 0; p < un; ++p) {
        values[p] = rest % d;
        rest /= d;
      }
      for (std::size_t p = 0; p < un; ++p) {
        for (int end : {mu[p].first, mu[p].second}) {
          if (end < n)
            ia[lead + static_cast<std::size_t>(end)] = values[p];
          else
            ib[lead + static_cast<std::size_t>(end - n)] = values[p];
        }
      }
      for (std::size_t o = 0; o < outer; ++o) {
        std::size_t r = o;
        for (std::size_t ax = lead; ax-- > 0;) {
          ia[ax] = ib[ax] = r % a.dim(ax);
          r /= a.dim(ax);
        }
        total += a.at(std::span<const std::size_t>(ia)) * b.at(std::span<const std::size_t>(ib));
      }
    }
    groups[internal].matchings += 1;
    groups[internal].sum += total;
  }
  return groups;
}

double matching_metric_inner(const DenseTensor& a, const DenseTensor& b, int n) {
  double s = 0.0;
  for (const auto& g : matching_metric_terms(a, b, n)) s += g.sum;
  return s;
}

}  // namespace bilinsim
