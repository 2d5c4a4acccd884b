#include "bilinsim/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace bilinsim {

namespace {

std::vector<Layer> zero_layers(const std::vector<Layer>& params) {
  std::vector<Layer> out = params;
  for (auto& layer : out) {
    if (auto* lin = std::get_if<LinearLayer>(&layer)) {
      lin->w.setZero();
    } else {
      auto& b = std::get<BilinearLayer>(layer);
      b.l.setZero();
      b.r.setZero();
      b.d.setZero();
    }
  }
  return out;
}

void check_shape(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("adamw_step: parameter/gradient shape mismatch");
}

}  // namespace

OptimState OptimState::zeros_like(const std::vector<Layer>& params) {
  return {zero_layers(params), zero_layers(params), 0};
}

void adamw_step(std::vector<Layer>& params, const std::vector<Layer>& grads, OptimState& state, const AdamParams& p) {
  if (state.m.empty() && !params.empty()) state = OptimState::zeros_like(params);
  for_each_matrix_pair(params, grads, [](Matrix& w, const Matrix& g) {
    check_shape(w, g);
    if (!g.allFinite()) throw DomainError("adamw_step: non-finite gradient");
  });
  ++state.t;
  const double c1 = 1.0 - std::pow(p.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(p.beta2, static_cast<double>(state.t));

  // Walk params, m and v in lockstep by flattening the matrix lists.
  std::vector<Matrix*> ws, ms, vs;
  std::vector<const Matrix*> gs;
  for_each_matrix_pair(params, grads, [&](Matrix& w, const Matrix& g) {
    ws.push_back(&w);
    gs.push_back(&g);
  });
  for_each_matrix_pair(state.m, state.v, [&](Matrix& m, const Matrix&) { ms.push_back(&m); });
  for_each_matrix_pair(state.v, state.m, [&](Matrix& v, const Matrix&) { vs.push_back(&v); });
  if (ms.size() != ws.size()) throw ShapeError("adamw_step: optimiser state does not match parameters");

  for (std::size_t i = 0; i < ws.size(); ++i) {
    Matrix& w = *ws[i];
    const Matrix& g = *gs[i];
    Matrix& m = *ms[i];
    Matrix& v = *vs[i];
    check_shape(w, m);
    m = p.beta1 * m + (1.0 - p.beta1) * g;
    v = p.beta2 * v + (1.0 - p.beta2) * g.cwiseProduct(g);
    if (p.weight_decay != 0.0) w *= 1.0 - p.lr * p.weight_decay;
    w.array() -= p.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + p.eps);
  }
}

Schedule parse_schedule(std::string_view name) {
  if (name == "constant") return Schedule::kConstant;
  if (name == "cosine") return Schedule::kCosine;
  throw ConfigError("unknown schedule '" + std::string(name) + "' (expected constant or cosine)");
}

double lr_schedule(Schedule kind, long step, long total, double peak) {
  if (kind == Schedule::kConstant) return peak;
  if (total <= 0) return peak;
  const double frac = std::clamp(static_cast<double>(step) / static_cast<double>(total), 0.0, 1.0);
  return peak * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

}  // namespace bilinsim
