#include "purekit/optim.hpp"

#include "purekit/error.hpp"

namespace purekit {

void sgd_step(NetworkParams& params, const NetworkParams& grads, const SgdConfig& cfg,
              SgdState& state) {
  params.require_same_layout(grads, "sgd_step gradients");
  const bool use_momentum = cfg.momentum != 0.0f;
  if (use_momentum) {
    if (state.velocity.entries().empty()) {
      state.velocity = NetworkParams::zeros_like(params);
    } else {
      params.require_same_layout(state.velocity, "sgd_step state");
    }
  }
  auto& pe = params.entries();
  const auto& ge = grads.entries();
  for (std::size_t e = 0; e < pe.size(); ++e) {
    auto& p = pe[e].values;
    const auto& g = ge[e].values;
    if (use_momentum) {
      auto& v = state.velocity.entries()[e].values;
      for (std::size_t i = 0; i < p.size(); ++i) {
        const float d = g[i] + cfg.weight_decay * p[i];
        v[i] = cfg.momentum * v[i] + d;
        p[i] -= cfg.lr * v[i];
      }
    } else {
      for (std::size_t i = 0; i < p.size(); ++i) {
        const float d = g[i] + cfg.weight_decay * p[i];
        p[i] -= cfg.lr * d;
      }
    }
  }
}

}  // namespace purekit
