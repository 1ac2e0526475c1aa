#pragma once

#include <stdexcept>
#include <string>

namespace mdfl {

// Base of every error raised by the core. The C API maps each subclass to
// a distinct status code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid user configuration (out-of-range value, unknown key, bad shape
// arithmetic for a partition).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed input file.
class ParseError : public Error {
 public:
  using Error::Error;
};

// Well-formed input that breaks a domain invariant (duplicate ids,
// non-monotone rounds, out-of-range labels).
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Caller violated an operation's precondition (shape mismatch, empty list
// where one is required).
class PreconditionError : public Error {
 public:
  using Error::Error;
};

// Internal bookkeeping broke (ledger overdraft, non-finite loss). Signals a
// bug in the caller's protocol, never a recoverable condition.
class InvariantError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace mdfl
