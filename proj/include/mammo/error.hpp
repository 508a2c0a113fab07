#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace mammo {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed or truncated input bytes. `offset` is where parsing stopped.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t offset)
        : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

/// Invalid parameters or data that violate a precondition.
class ConfigError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// Non-finite values, failed calibration or divergence. Carries the
/// iteration/step/row index when one applies.
class NumericError : public Error {
public:
    NumericError(const std::string& what, std::optional<std::size_t> index = std::nullopt)
        : Error(index ? what + " (index " + std::to_string(*index) + ")" : what), index_(index) {}

    std::optional<std::size_t> index() const noexcept { return index_; }

private:
    std::optional<std::size_t> index_;
};

} // namespace mammo
