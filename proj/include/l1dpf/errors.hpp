#pragma once

#include <stdexcept>
#include <string>

namespace l1dpf {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed buffer, run-length list or file contents.
class FormatError : public Error {
public:
    using Error::Error;
};

/// Region too small to sample (area below one pixel, or zero-area quad).
class DegenerateRegionError : public Error {
public:
    using Error::Error;
};

/// Polygon precondition violated (non-convex, zero area).
class GeometryError : public Error {
public:
    using Error::Error;
};

class InsufficientSupportError : public Error {
public:
    using Error::Error;
};

class DecompositionError : public Error {
public:
    using Error::Error;
};

class DictionaryError : public Error {
public:
    using Error::Error;
};

/// Caller broke a dimensional contract.
class ContractError : public Error {
public:
    using Error::Error;
};

class NumericError : public Error {
public:
    using Error::Error;
};

/// Bad configuration value; carries the offending key.
class ConfigError : public Error {
public:
    ConfigError(std::string key, const std::string& what)
        : Error(key.empty() ? what : key + ": " + what), key_(std::move(key)) {}

    const std::string& key() const noexcept { return key_; }

private:
    std::string key_;
};

/// Unusable input data (sequence, groundtruth, detections, results).
class DataError : public Error {
public:
    using Error::Error;
};

}  // namespace l1dpf
