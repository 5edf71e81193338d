#include "purekit/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "purekit/error.hpp"

namespace purekit {

std::string Shape::str() const {
  return std::to_string(channels) + "x" + std::to_string(height) + "x" + std::to_string(width);
}

ImageTensor::ImageTensor(Shape shape, float fill) : shape_(shape), data_(shape.numel(), fill) {
  if (shape.channels < 0 || shape.height < 0 || shape.width < 0) {
    throw ShapeError("negative tensor dimension " + shape.str());
  }
}

ImageTensor::ImageTensor(Shape shape, std::vector<float> data)
    : shape_(shape), data_(std::move(data)) {
  if (data_.size() != shape.numel()) {
    throw ShapeError("tensor payload has " + std::to_string(data_.size()) +
                     " values, shape " + shape.str() + " needs " +
                     std::to_string(shape.numel()));
  }
}

bool ImageTensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

bool operator==(const ImageTensor& a, const ImageTensor& b) {
  return a.shape_ == b.shape_ && a.data_.size() == b.data_.size() &&
         (a.data_.empty() ||
          std::memcmp(a.data_.data(), b.data_.data(), a.data_.size() * sizeof(float)) == 0);
}

void require_same_shape(const Shape& expected, const Shape& actual, const char* what) {
  if (!(expected == actual)) {
    throw ShapeError(std::string(what) + ": expected shape " + expected.str() + ", got " +
                     actual.str());
  }
}

float l2_norm(const ImageTensor& t) {
  double acc = 0.0;
  for (float v : t.values()) acc += static_cast<double>(v) * v;
  return static_cast<float>(std::sqrt(acc));
}

float linf_norm(const ImageTensor& t) {
  float m = 0.0f;
  for (float v : t.values()) m = std::max(m, std::fabs(v));
  return m;
}

float l2_distance(const ImageTensor& a, const ImageTensor& b) {
  require_same_shape(a.shape(), b.shape(), "l2_distance");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    acc += d * d;
  }
  return static_cast<float>(std::sqrt(acc));
}

ImageTensor add(const ImageTensor& a, const ImageTensor& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  ImageTensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

ImageTensor subtract(const ImageTensor& a, const ImageTensor& b) {
  require_same_shape(a.shape(), b.shape(), "subtract");
  ImageTensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
  return out;
}

ImageTensor clamp(ImageTensor t, float lo, float hi) {
  for (float& v : t.values()) v = std::clamp(v, lo, hi);
  return t;
}

}  // namespace purekit
