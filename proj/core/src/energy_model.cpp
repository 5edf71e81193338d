#include "purekit/energy_model.hpp"

#include "purekit/error.hpp"

namespace purekit {

NetworkEnergy::NetworkEnergy(const NetworkSpec& spec, const NetworkParams& params)
    : net_(spec, params) {
  if (net_.output_size() != 1) {
    throw ShapeError("energy network must output one scalar, architecture outputs " +
                     std::to_string(net_.output_size()));
  }
}

float NetworkEnergy::energy(const ImageTensor& x) const {
  thread_local Network::Workspace ws;
  return net_.forward(x, ws)[0];
}

float NetworkEnergy::energy_and_grad(const ImageTensor& x, ImageTensor& grad) const {
  // forward() rebuilds the workspace when it belongs to a different architecture.
  thread_local Network::Workspace ws;
  const float e = net_.forward(x, ws)[0];
  const float one = 1.0f;
  net_.backward(std::span(&one, 1), ws, &grad, nullptr);
  return e;
}

float QuadraticEnergy::energy(const ImageTensor& x) const {
  require_same_shape(shape_, x.shape(), "quadratic energy input");
  float acc = 0.0f;
  for (float v : x.values()) acc += v * v;
  return 0.5f * curvature_ * acc;
}

float QuadraticEnergy::energy_and_grad(const ImageTensor& x, ImageTensor& grad) const {
  require_same_shape(shape_, x.shape(), "quadratic energy input");
  if (!(grad.shape() == shape_)) grad = ImageTensor(shape_);
  float acc = 0.0f;
  for (std::size_t i = 0; i < x.size(); ++i) {
    acc += x[i] * x[i];
    grad[i] = curvature_ * x[i];
  }
  return 0.5f * curvature_ * acc;
}

}  // namespace purekit
