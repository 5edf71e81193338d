#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace purekit {

struct Shape {
  int channels = 0;
  int height = 0;
  int width = 0;

  std::size_t numel() const {
    return static_cast<std::size_t>(channels) * static_cast<std::size_t>(height) *
           static_cast<std::size_t>(width);
  }
  std::string str() const;
  friend bool operator==(const Shape&, const Shape&) = default;
};

// A channel-planar (CHW) image of 32-bit floats. Pixel images live in [0, 1];
// perturbations and gradients share the type without that range restriction.
class ImageTensor {
 public:
  ImageTensor() = default;
  explicit ImageTensor(Shape shape, float fill = 0.0f);
  ImageTensor(Shape shape, std::vector<float> data);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }

  std::span<float> values() { return data_; }
  std::span<const float> values() const { return data_; }
  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }

  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }
  float& at(int c, int y, int x) {
    return data_[(static_cast<std::size_t>(c) * shape_.height + y) * shape_.width + x];
  }
  float at(int c, int y, int x) const {
    return data_[(static_cast<std::size_t>(c) * shape_.height + y) * shape_.width + x];
  }

  bool all_finite() const;

  // Bitwise equality of shape and payload.
  friend bool operator==(const ImageTensor& a, const ImageTensor& b);

 private:
  Shape shape_;
  std::vector<float> data_;
};

// Throws ShapeError naming both shapes when they differ.
void require_same_shape(const Shape& expected, const Shape& actual, const char* what);

float l2_norm(const ImageTensor& t);
float linf_norm(const ImageTensor& t);
// ||a - b||_2 accumulated in a fixed order.
float l2_distance(const ImageTensor& a, const ImageTensor& b);
ImageTensor add(const ImageTensor& a, const ImageTensor& b);
ImageTensor subtract(const ImageTensor& a, const ImageTensor& b);
ImageTensor clamp(ImageTensor t, float lo, float hi);

}  // namespace purekit
