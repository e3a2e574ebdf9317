#pragma once

#include <stdexcept>
#include <string>

namespace colddamp {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  /// Short machine-readable category used in CLI error reports.
  virtual const char* kind() const noexcept { return "error"; }
};

/// Input violates a documented invariant. `field()` names the offending input.
class ValidationError : public Error {
 public:
  ValidationError(std::string field, const std::string& constraint)
      : Error(field + ": " + constraint), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }
  const char* kind() const noexcept override { return "validation"; }

 private:
  std::string field_;
};

/// |1 - AD| vanished: the loop sits on its algebraic singularity.
class LoopSingularityError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "loop_singularity"; }
};

/// Feedback drives the total series resistance to zero or below.
class AntiDampingError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "anti_damping"; }
};

/// Continuous-time system has an eigenvalue with non-negative real part.
class StabilityError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "stability"; }
};

/// Requested value lies outside the supported range.
class RangeError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "range"; }
};

/// Non-finite or otherwise broken numerical result.
class NumericalError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "numerical"; }
};

class FitError : public Error {
 public:
  FitError(const std::string& what, double residual)
      : Error(what), residual_(residual) {}
  double residual() const noexcept { return residual_; }
  const char* kind() const noexcept override { return "fit"; }

 private:
  double residual_;
};

class PeakDetectionError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "peak_detection"; }
};

/// Calibration tones do not constrain the impedance model.
class ConditioningError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "conditioning"; }
};

class LengthError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "length"; }
};

class IoError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "io"; }
};

}  // namespace colddamp
