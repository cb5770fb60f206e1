#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace caldpm {

// Every error thrown by the library derives from Error so callers (the CLI in
// particular) can map failures to exit codes without knowing the details.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Time outside the schedule's domain [0, T].
class DomainError : public Error {
 public:
  using Error::Error;
};

// s > t where s <= t is required (transition kernels, posterior draws).
class OrderingError : public Error {
 public:
  using Error::Error;
};

class ArgumentError : public Error {
 public:
  using Error::Error;
};

// Division by sigma_t at a time where sigma_t == 0.
class SingularTimeError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

// Table lookup outside the stored time range.
class RangeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  ConfigError(std::string key, const std::string& what)
      : Error("config key '" + key + "': " + what), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class UnsupportedVersionError : public Error {
 public:
  using Error::Error;
};

// Monte Carlo estimation could not produce a value (e.g. a label never drawn).
class EstimationError : public Error {
 public:
  using Error::Error;
};

// Non-finite training loss; carries the optimizer step at which it happened.
class TrainingError : public Error {
 public:
  TrainingError(long step, const std::string& what)
      : Error("step " + std::to_string(step) + ": " + what), step_(step) {}
  long step() const { return step_; }

 private:
  long step_;
};

// Non-finite sampler state; carries the integration step index.
class DivergenceError : public Error {
 public:
  DivergenceError(long step, const std::string& what)
      : Error("step " + std::to_string(step) + ": " + what), step_(step) {}
  long step() const { return step_; }

 private:
  long step_;
};

}  // namespace caldpm
