#pragma once

#include <stdexcept>
#include <string>

namespace gsalign {

/// Base class for every error raised by the library. `exit_code()` is the
/// status the CLI reports for it: 1 for usage/config problems, 2 for bad
/// data or files.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    virtual int exit_code() const noexcept { return 2; }
};

class UsageError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 1; }
};

class ConfigError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 1; }
};

class InputError : public Error {
public:
    using Error::Error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class NumericError : public Error {
public:
    using Error::Error;
};

class FormatError : public Error {
public:
    using Error::Error;
};

class DataError : public Error {
public:
    using Error::Error;
};

class InvalidRotationError : public Error {
public:
    using Error::Error;
};

} // namespace gsalign
