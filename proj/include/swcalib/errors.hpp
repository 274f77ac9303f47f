#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace swcalib {

// Base for every error raised by the library. The CLI maps each subclass to
// its own exit code (see tools/cli.hpp).
class Error : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
   public:
    using Error::Error;
};

class DomainError : public Error {
   public:
    using Error::Error;
};

class ConfigError : public Error {
   public:
    using Error::Error;
};

class UsageError : public Error {
   public:
    using Error::Error;
};

class IoError : public Error {
   public:
    using Error::Error;
};

// Raised when a NaN or Inf shows up in a forward value or a gradient.
class NonFiniteError : public Error {
   public:
    NonFiniteError(std::string op, std::string phase)
        : Error("non-finite value in " + phase + " of op '" + op + "'"),
          op_(std::move(op)),
          phase_(std::move(phase)) {}

    const std::string& op() const { return op_; }
    const std::string& phase() const { return phase_; }

   private:
    std::string op_;
    std::string phase_;
};

enum class FormatErrc {
    kBadMagic = 1,
    kVersionMismatch,
    kTruncated,
    kOverlappingOffsets,
    kMalformed,
};

const char* to_string(FormatErrc code);

class FormatError : public Error {
   public:
    FormatError(FormatErrc code, const std::string& detail)
        : Error(std::string(to_string(code)) + ": " + detail), code_(code) {}

    FormatErrc code() const { return code_; }

   private:
    FormatErrc code_;
};

}  // namespace swcalib
