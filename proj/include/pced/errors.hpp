#pragma once

#include <stdexcept>
#include <string>

namespace pced {

// Base of every error thrown by the library. The CLI maps the concrete
// subclasses onto distinct exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input outside an operation's mathematical domain (bad range, length
// mismatch, out-of-vocabulary token).
class DomainError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class BuildError : public Error {
 public:
  using Error::Error;
};

class CorruptionError : public Error {
 public:
  using Error::Error;
};

class NotFoundError : public Error {
 public:
  using Error::Error;
};

class ProviderError : public Error {
 public:
  using Error::Error;
};

class BenchError : public Error {
 public:
  using Error::Error;
};

}  // namespace pced
