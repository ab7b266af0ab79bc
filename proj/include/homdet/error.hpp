// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace homdet {

/// Error categories surfaced by the library. The C API maps each one onto a
/// stable status code; the CLI maps those onto process exit codes.
enum class ErrorKind {
  Contract,    // caller broke a precondition (shape, range, length)
  Config,      // invalid configuration value or combination
  Schema,      // manifest / config document does not match its schema
  MissingFile, // referenced path does not exist or cannot be opened
  Io,          // read/write failure on an existing path
  Version,     // container magic or version mismatch
  Truncated,   // container ended early
  Divergence,  // non-finite or exploding training loss
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class DivergenceError : public Error {
 public:
  DivergenceError(long step, const std::string& what)
      : Error(ErrorKind::Divergence, what), step_(step) {}
  long step() const noexcept { return step_; }

 private:
  long step_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, const std::string& what) {
  if (!cond) fail(ErrorKind::Contract, what);
}

/// Warning sink. Defaults to stderr; the C API lets callers install their own.
using WarningHandler = void (*)(const char* message, void* user);
void set_warning_handler(WarningHandler handler, void* user);
void warn(const std::string& message);

}  // namespace homdet
