#pragma once

#include <stdexcept>
#include <string>

namespace motortemp {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Bad arguments or configuration values (CLI exit code 1).
class ConfigError : public Error {
public:
    using Error::Error;
};

// Malformed or inconsistent input data (CLI exit code 2).
class DataError : public Error {
public:
    using Error::Error;
};

// Numerical failure: divergence, singular systems (CLI exit code 3).
class NumericError : public Error {
public:
    using Error::Error;
};

}  // namespace motortemp
