#pragma once

#include <stdexcept>

namespace hifgo {

// Error taxonomy mirrored by the CLI exit codes: configuration and
// validation problems exit 2, numeric failures exit 3, I/O failures exit 4.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DimError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class InputError : public Error {
public:
    using Error::Error;
};

class ParseError : public Error {
public:
    using Error::Error;
};

class NumericError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace hifgo
