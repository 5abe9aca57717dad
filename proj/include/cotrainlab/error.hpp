#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

namespace cotrainlab {

// Base of every error the library raises. The CLI maps subclasses to exit
// codes (see exit_code_for()).
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Bad argument to an operation: wrong channel count, even kernel, index out
// of range, dimension mismatch.
class InvalidInputError : public Error {
public:
    using Error::Error;
};

// Structurally valid request that cannot be honored with the given
// configuration (too few examples per class, patch larger than the image).
class InvalidConfigError : public Error {
public:
    using Error::Error;
};

// Config document problems. `pointer` is the JSON pointer of the offending
// node ("" for the document root).
class ConfigError : public Error {
public:
    ConfigError(std::string pointer, const std::string& message)
        : Error(pointer.empty() ? message : pointer + ": " + message),
          pointer_(std::move(pointer)) {}

    const std::string& pointer() const noexcept { return pointer_; }

private:
    std::string pointer_;
};

// Malformed binary/CSV input. `offset` is the byte offset (binary files) or
// line number (CSV) where parsing failed.
class FormatError : public Error {
public:
    FormatError(std::string file, std::size_t offset, const std::string& message)
        : Error(file + " @" + std::to_string(offset) + ": " + message),
          file_(std::move(file)),
          offset_(offset) {}

    const std::string& file() const noexcept { return file_; }
    std::size_t offset() const noexcept { return offset_; }

private:
    std::string file_;
    std::size_t offset_;
};

class NumericError : public Error {
public:
    using Error::Error;
};

// Statistic undefined for the input (e.g. phi of a constant sequence).
class DegenerateInputError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace cotrainlab
