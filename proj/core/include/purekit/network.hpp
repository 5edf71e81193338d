#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "purekit/tensor.hpp"

namespace purekit {

class RngStream;

enum class LayerKind { conv, leaky_relu, avg_pool, dense, global_sum };

struct LayerSpec {
  LayerKind kind = LayerKind::conv;
  int kernel = 0;
  int in_channels = 0;
  int out_channels = 0;
  int stride = 1;
  int pad = 0;
  float slope = 0.0f;

  static LayerSpec conv(int kernel, int in_channels, int out_channels, int stride = 1,
                        int pad = 1);
  static LayerSpec leaky_relu(float slope);
  static LayerSpec avg_pool(int kernel);
  // `in` must equal the flattened size of the incoming activation (CHW order).
  static LayerSpec dense(int in, int out);
  // Sums each channel over all spatial positions.
  static LayerSpec global_sum();

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct ParamLayout {
  std::string name;
  std::vector<int> shape;
  std::size_t numel() const;
};

// Architecture description. Shapes are inferred layer by layer from `input`;
// validate() rejects inconsistent channel counts and non-integral pooling.
struct NetworkSpec {
  Shape input;
  std::vector<LayerSpec> layers;

  void validate() const;
  // shapes()[i] is the input shape of layer i; shapes().back() is the output.
  std::vector<Shape> shapes() const;
  Shape output_shape() const;
  std::size_t output_size() const { return output_shape().numel(); }
  std::vector<ParamLayout> param_layout() const;
  std::size_t parameter_count() const;

  // Compact single-line form, e.g. "in:3x8x8;conv:3:3:32:1:1;lrelu:0.05;gsum;dense:32:1".
  std::string to_string() const;
  static NetworkSpec parse(std::string_view text);

  // conv(3,C->w1,s1) lrelu conv(3,w1->w2,s2) lrelu conv(3,w2->w3,s2) lrelu gsum dense(w3->1)
  static NetworkSpec energy_net(Shape input, int w1 = 32, int w2 = 64, int w3 = 64,
                                float slope = 0.05f);
  // conv(3,C->w1) lrelu pool2 conv(3,w1->w2) lrelu pool2 dense(->classes)
  static NetworkSpec classifier_net(Shape input, int classes, int w1 = 16, int w2 = 32,
                                    float slope = 0.05f);

  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

struct ParamEntry {
  std::string name;
  std::vector<int> shape;
  std::vector<float> values;
  friend bool operator==(const ParamEntry& a, const ParamEntry& b);
};

// Named parameter arrays in the architecture's fixed order. Also used for
// gradients and optimizer state, which share the layout.
class NetworkParams {
 public:
  NetworkParams() = default;
  explicit NetworkParams(std::vector<ParamEntry> entries);

  static NetworkParams zeros(const NetworkSpec& spec);
  static NetworkParams zeros_like(const NetworkParams& other);
  // Every parameter i.i.d. N(0, stddev^2).
  static NetworkParams normal(const NetworkSpec& spec, float stddev, RngStream& rng);

  const std::vector<ParamEntry>& entries() const { return entries_; }
  std::vector<ParamEntry>& entries() { return entries_; }
  const ParamEntry* find(std::string_view name) const;
  ParamEntry* find(std::string_view name);
  std::size_t total_size() const;

  // Throws ShapeError unless names and shapes agree entry by entry.
  void require_same_layout(const NetworkParams& other, const char* what) const;
  // Throws ShapeError unless the entries match spec.param_layout().
  void require_matches(const NetworkSpec& spec) const;

  // All values concatenated in entry order.
  std::vector<float> flatten() const;
  bool all_finite() const;

  friend bool operator==(const NetworkParams& a, const NetworkParams& b) {
    return a.entries_ == b.entries_;
  }

 private:
  std::vector<ParamEntry> entries_;
};

// A network with weights repacked for evaluation. Activations are kept
// position-major (HWC) internally; images enter and leave in CHW order.
// Immutable after construction, so one instance can serve many threads as
// long as each thread brings its own Workspace.
class Network {
 public:
  class Workspace;

  // Gradient accumulators in the packed layout. Convert with to_params().
  struct Gradients {
    std::vector<std::vector<float>> buffers;
  };

  Network(NetworkSpec spec, const NetworkParams& params);
  ~Network();
  Network(const Network&);
  Network(Network&&) noexcept;
  Network& operator=(const Network&);
  Network& operator=(Network&&) noexcept;

  const NetworkSpec& spec() const { return spec_; }
  std::size_t output_size() const { return output_size_; }

  Workspace make_workspace() const;
  Gradients make_gradients() const;

  // Forward pass; activations stay in `ws` for a following backward().
  std::span<const float> forward(const ImageTensor& x, Workspace& ws) const;

  // Backpropagates dL/d(output) through the activations recorded by the last
  // forward() on `ws`. Writes dL/dx into `input_grad` when non-null and adds
  // dL/dtheta into `grads` when non-null.
  void backward(std::span<const float> output_grad, Workspace& ws, ImageTensor* input_grad,
                Gradients* grads) const;

  // Unpacks accumulated gradients into the canonical parameter layout, times `scale`.
  NetworkParams to_params(const Gradients& grads, float scale) const;

 private:
  struct Layer;
  bool fits(const Workspace& ws) const;

  NetworkSpec spec_;
  std::vector<Shape> shapes_;
  std::vector<Layer> layers_;
  std::vector<ParamLayout> layout_;
  std::size_t output_size_ = 0;
};

class Network::Workspace {
 public:
  Workspace() = default;

 private:
  friend class Network;
  std::vector<std::vector<float>> acts;  // acts[i]: input to layer i, HWC; back(): output
  std::vector<float> grad_a;
  std::vector<float> grad_b;
  std::vector<float> scratch;
};

// Softmax cross-entropy. Returns -log softmax(logits)[label] and writes
// softmax(logits) - onehot(label) into `dlogits` when non-empty.
float softmax_cross_entropy(std::span<const float> logits, int label, std::span<float> dlogits);
std::vector<float> softmax(std::span<const float> logits);
int argmax(std::span<const float> values);

// Energy network G_theta (scalar output).
float energy(const NetworkSpec& spec, const NetworkParams& params, const ImageTensor& x);
ImageTensor energy_input_grad(const NetworkSpec& spec, const NetworkParams& params,
                              const ImageTensor& x);
// Gradient of (1/|batch|) sum_i G_theta(x_i) with respect to theta.
NetworkParams energy_param_grad(const NetworkSpec& spec, const NetworkParams& params,
                                std::span<const ImageTensor> batch);

// Classifier f_phi (J logits).
std::vector<float> classifier_forward(const NetworkSpec& spec, const NetworkParams& params,
                                      const ImageTensor& x);
struct LossAndGrads {
  float loss = 0.0f;
  NetworkParams grads;
};
LossAndGrads classifier_backward(const NetworkSpec& spec, const NetworkParams& params,
                                 const ImageTensor& x, int label);

}  // namespace purekit
