#pragma once

#include <stdexcept>
#include <string>

namespace handsoff {

/// Base of every error the library throws.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Operand shapes or widths do not line up.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// A caller-supplied value is outside its contract (bad class index, empty set, ...).
class InputError : public Error {
public:
    using Error::Error;
};

/// NaN/Inf showed up where finite values are required.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Malformed or out-of-range configuration; the CLI maps this to exit code 2.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// File could not be read or written, or has the wrong layout.
class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace handsoff
