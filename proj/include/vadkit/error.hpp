#pragma once

#include <stdexcept>
#include <string>

namespace vadkit {

/// Base exception for every contract violation raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a tensor shape does not match what an operation expects.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Raised by the trainer when the loss stops being finite.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, long step) : Error(what), step_(step) {}
  long step() const noexcept { return step_; }

 private:
  long step_;
};

inline void require(bool cond, const std::string& message) {
  if (!cond) throw Error(message);
}

}  // namespace vadkit
