#pragma once

#include <stdexcept>
#include <string>

namespace shd {

class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised where a formula would divide by a vanishing quantity (zero power,
/// zero efficiency, detection axis orthogonal to a mode).
class DivisionError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Eigenfrequencies that cannot come from the feedback-spring potential.
class InconsistentSpectrum : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class InsufficientData : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class FitFailure : public std::runtime_error {
 public:
  FitFailure(const std::string& what, std::string diagnostics)
      : std::runtime_error(what), diagnostics_(std::move(diagnostics)) {}

  const std::string& diagnostics() const noexcept { return diagnostics_; }

 private:
  std::string diagnostics_;
};

}  // namespace shd
