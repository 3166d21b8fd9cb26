#pragma once

#include <stdexcept>
#include <string>

namespace ulm {

// Every failure the library reports derives from Error so callers can
// catch broadly, while tests match the concrete kind.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class TruncationError : public Error {
 public:
  using Error::Error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class CapacityError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class SurgeryViolation : public Error {
 public:
  using Error::Error;
};

class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, long step, double lr)
      : Error(what), step_(step), lr_(lr) {}
  long step() const { return step_; }
  double lr() const { return lr_; }

 private:
  long step_;
  double lr_;
};

}  // namespace ulm
