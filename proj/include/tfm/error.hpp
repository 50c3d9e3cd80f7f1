#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace tfm {

// Base of every error raised by the library. The CLI maps the subclasses
// onto process exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class UnsupportedOpError : public Error {
public:
    using Error::Error;
};

// Violated precondition of an operation (bad time pair, eps <= 0, ...).
class ContractError : public Error {
public:
    using Error::Error;
};

class IndexError : public Error {
public:
    using Error::Error;
};

// Non-finite values, training divergence, integration failure.
class NumericalError : public Error {
public:
    using Error::Error;
};

class ValidationError : public Error {
public:
    ValidationError(std::string key, const std::string& what)
        : Error("invalid config key '" + key + "': " + what), key_(std::move(key)) {}

    const std::string& key() const noexcept { return key_; }

private:
    std::string key_;
};

class IoError : public Error {
public:
    explicit IoError(const std::string& what) : Error(what) {}
    IoError(const std::string& what, std::size_t offset)
        : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset), has_offset_(true) {}

    std::size_t offset() const noexcept { return offset_; }
    bool has_offset() const noexcept { return has_offset_; }

private:
    std::size_t offset_ = 0;
    bool has_offset_ = false;
};

} // namespace tfm
