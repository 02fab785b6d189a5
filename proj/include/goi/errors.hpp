#pragma once

#include <stdexcept>
#include <string>

namespace goi {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A binary or text container could not be decoded.
class FormatError : public Error {
public:
    enum class Kind {
        WrongMagic,  // "wrong container type"
        Truncated,
        UnsupportedVersion,
        Malformed,
    };

    FormatError(Kind kind, const std::string& what);

    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

const char* to_string(FormatError::Kind kind) noexcept;

/// Data violates a domain invariant (shape mismatch, out-of-range value, ...).
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Filesystem failure.
class IoError : public Error {
public:
    using Error::Error;
};

/// Non-finite values showed up during optimization.
class NumericError : public Error {
public:
    using Error::Error;
};

} // namespace goi
