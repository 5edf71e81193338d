#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>

namespace purekit {

// Root of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor or parameter shapes disagree with what an operation expects.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid argument or configuration value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed, truncated or oversized file payload.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Filesystem failure (missing input, failed write).
class IoError : public Error {
 public:
  using Error::Error;
};

// A NaN/Inf appeared, or a run diverged. Carries the iteration (Langevin or
// training step) and the item (image index) when known.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what, std::optional<std::int64_t> step = {},
                        std::optional<std::int64_t> item = {})
      : Error(decorate(what, step, item)), base_(what), step_(step), item_(item) {}

  std::optional<std::int64_t> step() const { return step_; }
  std::optional<std::int64_t> item() const { return item_; }

  NumericError with_item(std::int64_t item) const { return NumericError(base_, step_, item); }

 private:
  static std::string decorate(const std::string& what, std::optional<std::int64_t> step,
                              std::optional<std::int64_t> item) {
    std::string msg = what;
    if (step) msg += " (step " + std::to_string(*step) + ")";
    if (item) msg += " (item " + std::to_string(*item) + ")";
    return msg;
  }

  std::string base_;
  std::optional<std::int64_t> step_;
  std::optional<std::int64_t> item_;
};

}  // namespace purekit
