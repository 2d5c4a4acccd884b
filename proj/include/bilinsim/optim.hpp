#pragma once

#include <string_view>
#include <vector>

#include "bilinsim/model.hpp"

namespace bilinsim {

struct AdamParams {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

// First and second moments mirror the parameter layers one-to-one.
struct OptimState {
  std::vector<Layer> m;
  std::vector<Layer> v;
  long t = 0;

  static OptimState zeros_like(const std::vector<Layer>& params);
};

// theta <- theta - lr*wd*theta, then the bias-corrected Adam update.
// Throws DomainError on non-finite gradients, ShapeError on mismatches.
void adamw_step(std::vector<Layer>& params, const std::vector<Layer>& grads, OptimState& state,
                const AdamParams& p);

enum class Schedule { kConstant, kCosine };

Schedule parse_schedule(std::string_view name);

// constant: peak; cosine: peak * (1 + cos(pi * step / total)) / 2.
double lr_schedule(Schedule kind, long step, long total, double peak);

// Calls f(param, other) for each matching pair of weight matrices in two
// layer lists with identical structure.
template <typename F>
void for_each_matrix_pair(std::vector<Layer>& a, const std::vector<Layer>& b, F&& f);

}  // namespace bilinsim

#include "bilinsim/errors.hpp"

namespace bilinsim {

template <typename F>
void for_each_matrix_pair(std::vector<Layer>& a, const std::vector<Layer>& b, F&& f) {
  if (a.size() != b.size()) throw ShapeError("layer lists differ in length");
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].index() != b[i].index()) throw ShapeError("layer kinds differ at position " + std::to_string(i));
    if (auto* la = std::get_if<LinearLayer>(&a[i])) {
      f(la->w, std::get<LinearLayer>(b[i]).w);
    } else {
      auto& ba = std::get<BilinearLayer>(a[i]);
      const auto& bb = std::get<BilinearLayer>(b[i]);
      f(ba.l, bb.l);
      f(ba.r, bb.r);
      f(ba.d, bb.d);
    }
  }
}

}  // namespace bilinsim
