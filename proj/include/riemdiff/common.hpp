#pragma once

// Shared error taxonomy and tiny utilities used across the library.
//
// Error classes map onto the CLI exit codes: ConfigError -> 2,
// NumericError -> 3, IoError -> 4. Everything derives from Error so
// callers can catch the whole family at once.

#include <cstdint>
#include <stdexcept>
#include <string>

namespace riemdiff {

class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Violated API contract: bad shapes, unknown primitive, invalid argument.
class ContractError : public Error {
public:
    explicit ContractError(const std::string& msg) : Error("contract violation: " + msg) {}
};

// Numerical failure at runtime: non-convergence, underflow of a step size,
// non-finite values where finite ones are required.
class NumericError : public Error {
public:
    explicit NumericError(const std::string& msg) : Error("numeric failure: " + msg) {}
};

// A matrix handed to the QR factorization had (numerically) dependent columns.
class RankDeficiencyError : public NumericError {
public:
    explicit RankDeficiencyError(const std::string& msg) : NumericError("rank deficiency: " + msg) {}
};

// Bad user-facing configuration: malformed JSON, unknown keys, out-of-range values.
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error("config error: " + msg) {}
};

// Filesystem / serialization problems.
class IoError : public Error {
public:
    explicit IoError(const std::string& msg) : Error("io error: " + msg) {}
};

// Lossless double <-> string encoding for checkpoints. Hex float strings
// ("0x1.91eb851eb851fp+1") round-trip bit-exactly through strtod.
std::string double_to_hex(double v);
double double_from_hex(const std::string& s);

// FNV-1a over a byte string; used to stamp outputs with a config hash.
std::uint64_t fnv1a(const std::string& bytes);

} // namespace riemdiff
