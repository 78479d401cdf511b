// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace orbiter360 {

/// Base class for all errors raised by this library. Each subclass maps to a
/// process exit code so the command line tool can translate failures
/// uniformly: usage/config -> 2, I/O -> 3, training -> 4, integration -> 5.
class Error : public std::runtime_error {
  public:
    Error(std::string what, int exitCode) : std::runtime_error(std::move(what)), exitCode_(exitCode) {}
    int exitCode() const noexcept { return exitCode_; }

  private:
    int exitCode_;
};

/// Invalid argument passed to a library function.
class ArgumentError : public Error {
  public:
    explicit ArgumentError(const std::string& what) : Error(what, 2) {}
};

/// Malformed or inconsistent configuration (files or flags).
class ConfigError : public Error {
  public:
    explicit ConfigError(const std::string& what) : Error(what, 2) {}
};

/// Bad command line usage.
class UsageError : public Error {
  public:
    explicit UsageError(const std::string& what) : Error(what, 2) {}
};

/// Filesystem or serialization failure.
class IoError : public Error {
  public:
    explicit IoError(const std::string& what) : Error(what, 3) {}
};

/// Optimization diverged or a training-stage precondition failed.
class TrainingError : public Error {
  public:
    explicit TrainingError(const std::string& what) : Error(what, 4) {}
};

/// Components disagree at a boundary (shape, schedule, checkpoint layout).
class IntegrationError : public Error {
  public:
    explicit IntegrationError(const std::string& what) : Error(what, 5) {}
};

/// Dataset contents violate the manifest contract.
class DataError : public Error {
  public:
    explicit DataError(const std::string& what) : Error(what, 5) {}
};

#define ORBITER360_CHECK(cond, msg)                                                                                   \
    do {                                                                                                              \
        if (!(cond)) throw ::orbiter360::ArgumentError(msg);                                                          \
    } while (0)

} // namespace orbiter360
