#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace pulse {

// Every failure raised by the library derives from Error so callers (the CLI in
// particular) can map categories onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class ParameterError : public Error {
 public:
  using Error::Error;
};

class ContractError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ProtocolError : public Error {
 public:
  using Error::Error;
};

class SizeError : public Error {
 public:
  using Error::Error;
};

class NumericOverflow : public Error {
 public:
  NumericOverflow(const std::string& what, std::ptrdiff_t step = -1)
      : Error(step >= 0 ? what + " (step " + std::to_string(step) + ")" : what), step_(step) {}
  std::ptrdiff_t step() const { return step_; }

 private:
  std::ptrdiff_t step_;
};

class IntegrationDiverged : public Error {
 public:
  explicit IntegrationDiverged(std::size_t step)
      : Error("integration diverged at step " + std::to_string(step)), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

}  // namespace pulse
