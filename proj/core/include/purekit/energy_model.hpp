#pragma once

#include "purekit/network.hpp"
#include "purekit/tensor.hpp"

namespace purekit {

// Scalar energy G(x) with an input gradient. Implementations are immutable
// and safe to call concurrently.
class EnergyModel {
 public:
  virtual ~EnergyModel() = default;
  virtual Shape input_shape() const = 0;
  virtual float energy(const ImageTensor& x) const = 0;
  // Returns G(x) and writes dG/dx into `grad` (resized as needed).
  virtual float energy_and_grad(const ImageTensor& x, ImageTensor& grad) const = 0;
};

// G_theta given by a scalar-output network.
class NetworkEnergy final : public EnergyModel {
 public:
  NetworkEnergy(const NetworkSpec& spec, const NetworkParams& params);

  Shape input_shape() const override { return net_.spec().input; }
  float energy(const ImageTensor& x) const override;
  float energy_and_grad(const ImageTensor& x, ImageTensor& grad) const override;
  const Network& network() const { return net_; }

 private:
  Network net_;
};

// G(x) = a/2 * ||x||^2. Analytic test surrogate: the Langevin map is linear.
class QuadraticEnergy final : public EnergyModel {
 public:
  QuadraticEnergy(Shape shape, float curvature) : shape_(shape), curvature_(curvature) {}

  Shape input_shape() const override { return shape_; }
  float energy(const ImageTensor& x) const override;
  float energy_and_grad(const ImageTensor& x, ImageTensor& grad) const override;
  float curvature() const { return curvature_; }

 private:
  Shape shape_;
  float curvature_;
};

}  // namespace purekit
