#pragma once

#include "purekit/network.hpp"

namespace purekit {

struct SgdConfig {
  float lr = 0.0f;
  float momentum = 0.0f;
  float weight_decay = 0.0f;
};

// Momentum buffers; empty until the first step.
struct SgdState {
  NetworkParams velocity;
};

// d = g + weight_decay * p;  v = momentum * v + d;  p -= lr * v.
// With momentum == 0 the buffer is skipped and p -= lr * d.
void sgd_step(NetworkParams& params, const NetworkParams& grads, const SgdConfig& cfg,
              SgdState& state);

}  // namespace purekit
