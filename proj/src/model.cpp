#include "bilinsim/model.hpp"

#include <cmath>
#include <cstdio>

#include "bilinsim/errors.hpp"

namespace bilinsim {

namespace {

constexpr double kMaterialiseGuard = 1e7;

void check_finite(const Matrix& m, const char* what) {
  if (!m.allFinite()) throw DomainError(std::string(what) + " contains a non-finite entry");
}

void check_layer(const BilinearLayer& b) {
  if (b.l.rows() != b.r.rows() || b.l.cols() != b.r.cols())
    throw ShapeError("bilinear layer: L and R shapes differ");
  if (b.d.cols() != b.l.rows()) throw ShapeError("bilinear layer: D column count differs from rank");
  if (b.lift && b.l.cols() < 1) throw ShapeError("bilinear layer: lifted input needs at least one column");
  check_finite(b.l, "L");
  check_finite(b.r, "R");
  check_finite(b.d, "D");
}

void guard_materialise(const BilinearLayer& layer) {
  double n = static_cast<double>(layer.out_dim()) * static_cast<double>(layer.in_dim()) *
             static_cast<double>(layer.in_dim());
  if (n > kMaterialiseGuard) throw GuardError("materialise: tensor exceeds 1e7 entries");
}

Matrix lift_rows(const Matrix& x) {
  Matrix out(x.rows(), x.cols() + 1);
  out.col(0).setOnes();
  out.rightCols(x.cols()) = x;
  return out;
}

}  // namespace

ModelStack::ModelStack(std::size_t input_dim, std::vector<Layer> layers)
    : input_dim_(input_dim), output_dim_(input_dim), layers_(std::move(layers)) {
  std::size_t cur = input_dim_;
  bool seen_bilinear = false;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto where = "layer " + std::to_string(i);
    if (const auto* lin = std::get_if<LinearLayer>(&layers_[i])) {
      check_finite(lin->w, "linear weight");
      if (lin->in_dim() != cur)
        throw ShapeError(where + ": expects input " + std::to_string(lin->in_dim()) + ", got " +
                         std::to_string(cur));
      cur = lin->out_dim();
    } else {
      const auto& bil = std::get<BilinearLayer>(layers_[i]);
      check_layer(bil);
      if (bil.lift && seen_bilinear) throw ShapeError(where + ": only the first bilinear layer may lift");
      if (bil.raw_in_dim() != cur)
        throw ShapeError(where + ": expects input " + std::to_string(bil.raw_in_dim()) + ", got " +
                         std::to_string(cur));
      seen_bilinear = true;
      cur = bil.out_dim();
    }
  }
  output_dim_ = cur;
}

std::size_t ModelStack::bilinear_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += std::holds_alternative<BilinearLayer>(l);
  return n;
}

bool ModelStack::lifted() const {
  for (const auto& l : layers_)
    if (const auto* b = std::get_if<BilinearLayer>(&l)) return b->lift;
  return false;
}

std::string Checkpoint::id() const {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%08ld", meta.step);
  return meta.stage + "_" + buf;
}

void validate(const CheckpointMeta& meta) {
  if (meta.task.empty() || meta.stage.empty()) throw DomainError("checkpoint meta: task and stage must be nonempty");
  if (meta.step < 0) throw DomainError("checkpoint meta: step must be >= 0");
}

Vector lift(const Vector& x) {
  Vector out(x.size() + 1);
  out[0] = 1.0;
  out.tail(x.size()) = x;
  return out;
}

Vector forward(const ModelStack& stack, const Vector& x) {
  if (static_cast<std::size_t>(x.size()) != stack.input_dim())
    throw ShapeError("forward: input has dimension " + std::to_string(x.size()) + ", expected " +
                     std::to_string(stack.input_dim()));
  Vector h = x;
  for (const auto& layer : stack.layers()) {
    if (const auto* lin = std::get_if<LinearLayer>(&layer)) {
      h = lin->w * h;
    } else {
      const auto& b = std::get<BilinearLayer>(layer);
      Vector xt = b.lift ? lift(h) : h;
      h = b.d * ((b.l * xt).cwiseProduct(b.r * xt));
    }
  }
  return h;
}

Matrix forward_batch(const ModelStack& stack, const Matrix& inputs) {
  if (static_cast<std::size_t>(inputs.cols()) != stack.input_dim())
    throw ShapeError("forward_batch: input width does not match stack input_dim");
  Matrix h = inputs;
  for (const auto& layer : stack.layers()) {
    if (const auto* lin = std::get_if<LinearLayer>(&layer)) {
      h = h * lin->w.transpose();
    } else {
      const auto& b = std::get<BilinearLayer>(layer);
      Matrix xt = b.lift ? lift_rows(h) : h;
      Matrix u = xt * b.l.transpose();
      Matrix v = xt * b.r.transpose();
      h = u.cwiseProduct(v) * b.d.transpose();
    }
  }
  return h;
}

DenseTensor materialise(const BilinearLayer& layer) {
  guard_materialise(layer);
  const std::size_t K = layer.out_dim(), n = layer.in_dim(), r = layer.rank();
  DenseTensor out({K, n, n});
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t h = 0; h < r; ++h) {
      const double dk = layer.d(k, h);
      if (dk == 0.0) continue;
      for (std::size_t i = 0; i < n; ++i) {
        const double li = dk * layer.l(h, i);
        for (std::size_t j = 0; j < n; ++j) out[(k * n + i) * n + j] += li * layer.r(h, j);
      }
    }
  return out;
}

DenseTensor symmetric_part(const BilinearLayer& layer) {
  guard_materialise(layer);
  const std::size_t K = layer.out_dim(), n = layer.in_dim(), r = layer.rank();
  DenseTensor out({K, n, n});
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t h = 0; h < r; ++h) {
      const double dk = 0.5 * layer.d(k, h);
      if (dk == 0.0) continue;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
          out[(k * n + i) * n + j] += dk * (layer.l(h, i) * layer.r(h, j) + layer.r(h, i) * layer.l(h, j));
    }
  return out;
}

bool is_degree_two(const ModelStack& stack) { return stack.bilinear_count() == 1; }

BilinearLayer fold_to_bilinear(const ModelStack& stack) {
  if (!is_degree_two(stack))
    throw UnsupportedError("stack has " + std::to_string(stack.bilinear_count()) +
                           " bilinear layers; exactly one is required for a degree-2 fold");
  const auto& layers = stack.layers();
  Matrix pre = Matrix::Identity(static_cast<Eigen::Index>(stack.input_dim()),
                                static_cast<Eigen::Index>(stack.input_dim()));
  std::size_t i = 0;
  for (; std::holds_alternative<LinearLayer>(layers[i]); ++i) pre = std::get<LinearLayer>(layers[i]).w * pre;
  BilinearLayer folded = std::get<BilinearLayer>(layers[i]);
  if (folded.lift) {
    const auto cols = folded.l.cols() - 1;
    Matrix l(folded.l.rows(), pre.cols() + 1), r(folded.r.rows(), pre.cols() + 1);
    l.col(0) = folded.l.col(0);
    r.col(0) = folded.r.col(0);
    l.rightCols(pre.cols()) = folded.l.rightCols(cols) * pre;
    r.rightCols(pre.cols()) = folded.r.rightCols(cols) * pre;
    folded.l = std::move(l);
    folded.r = std::move(r);
  } else {
    folded.l = folded.l * pre;
    folded.r = folded.r * pre;
  }
  for (++i; i < layers.size(); ++i) folded.d = std::get<LinearLayer>(layers[i]).w * folded.d;
  return folded;
}

QuadraticForms quadratic_forms(const ModelStack& stack) {
  const BilinearLayer f = fold_to_bilinear(stack);
  const auto K = static_cast<Eigen::Index>(f.out_dim());
  const auto d = static_cast<Eigen::Index>(stack.input_dim());
  const Eigen::Index off = f.lift ? 1 : 0;

  QuadraticForms out;
  out.b = Matrix::Zero(K, d);
  out.c = Vector::Zero(K);
  out.q.reserve(static_cast<std::size_t>(K));
  for (Eigen::Index k = 0; k < K; ++k) {
    // S_k = 1/2 (L^T diag(D_k) R + R^T diag(D_k) L) over the (lifted) input.
    Matrix lr = f.l.transpose() * f.d.row(k).transpose().asDiagonal() * f.r;
    Matrix s = 0.5 * (lr + lr.transpose());
    out.q.push_back(s.bottomRightCorner(d, d));
    if (f.lift) {
      out.b.row(k) = 2.0 * s.row(0).segment(off, d);
      out.c[k] = s(0, 0);
    }
  }
  return out;
}

BilinearLayer diff_model(const BilinearLayer& b, const BilinearLayer& c) {
  if (b.in_dim() != c.in_dim() || b.out_dim() != c.out_dim() || b.lift != c.lift)
    throw ShapeError("diff_model: layers differ in input/output dimensions or lift");
  const auto rb = b.l.rows(), rc = c.l.rows();
  BilinearLayer out;
  out.lift = b.lift;
  out.l.resize(rb + rc, b.l.cols());
  out.r.resize(rb + rc, b.r.cols());
  out.d.resize(b.d.rows(), rb + rc);
  out.l.topRows(rb) = b.l;
  out.l.bottomRows(rc) = c.l;
  out.r.topRows(rb) = b.r;
  out.r.bottomRows(rc) = c.r;
  out.d.leftCols(rb) = b.d;
  out.d.rightCols(rc) = -c.d;
  return out;
}

ModelStack diff_model(const ModelStack& b, const ModelStack& c) {
  if (b.input_dim() != c.input_dim() || b.output_dim() != c.output_dim())
    throw ShapeError("diff_model: stacks differ in input/output dimensions");
  return ModelStack(b.input_dim(), {diff_model(fold_to_bilinear(b), fold_to_bilinear(c))});
}

ModelStack make_stack(BilinearLayer layer) {
  const std::size_t in = layer.raw_in_dim();
  return ModelStack(in, {std::move(layer)});
}

}  // namespace bilinsim
