#pragma once

#include <stdexcept>
#include <string>

namespace acmp {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Shape or layer-composition violation; message names the offending layer.
class ShapeError : public Error {
public:
    using Error::Error;
};

// Argument outside its mathematical domain (T <= 0, lr <= 0, fraction range, ...).
class DomainError : public Error {
public:
    using Error::Error;
};

// Invalid or inconsistent configuration (unknown keys, term/weight mismatch).
class ConfigError : public Error {
public:
    using Error::Error;
};

// Non-finite value produced where the math requires finite arithmetic.
class NumericError : public Error {
public:
    using Error::Error;
};

// File-format problems: bad magic, version mismatch, truncation.
class IoError : public Error {
public:
    using Error::Error;
};

} // namespace acmp
