#pragma once

#include <cstdint>
#include <iostream>
#include <mutex>
#include <set>
#include <stdexcept>
#include <string>

namespace gonerf {

// Base of everything this library throws. The CLI maps ValidationError
// subclasses to exit code 2 and every other Error to exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class InvalidInput : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class DegenerateSelection : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class ContractViolation : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class ConfigError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ChecksumError : public IoError {
 public:
  using IoError::IoError;
};

class VersionMismatch : public IoError {
 public:
  using IoError::IoError;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

// Raised by guidance providers. Carries what is needed to replay the call.
class ProviderError : public Error {
 public:
  ProviderError(const std::string& what, bool retriable, int timestep, std::uint64_t seed)
      : Error(what), retriable_(retriable), timestep_(timestep), seed_(seed) {}

  bool retriable() const { return retriable_; }
  int timestep() const { return timestep_; }
  std::uint64_t seed() const { return seed_; }

 private:
  bool retriable_;
  int timestep_;
  std::uint64_t seed_;
};

namespace log {

inline bool& quiet() {
  static bool q = false;
  return q;
}

inline void warn(const std::string& msg) {
  if (!quiet()) std::clog << "[gonerf] warning: " << msg << '\n';
}

// Emits each distinct message once per process.
inline void warn_once(const std::string& msg) {
  static std::mutex mu;
  static std::set<std::string> seen;
  {
    std::lock_guard<std::mutex> lock(mu);
    if (!seen.insert(msg).second) return;
  }
  warn(msg);
}

inline void info(const std::string& msg) {
  if (!quiet()) std::clog << "[gonerf] " << msg << '\n';
}

}  // namespace log
}  // namespace gonerf
