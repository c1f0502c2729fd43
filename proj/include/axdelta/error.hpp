#pragma once

#include <stdexcept>
#include <string>

namespace axdelta {

// All library failures derive from Error so callers can catch one type.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
public:
    using Error::Error;
};

class InvalidValueError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class LookupError : public Error {
public:
    using Error::Error;
};

class InputError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

enum class ParseErrorKind { BadMagic, UnsupportedVersion, Truncated, DuplicateName, Malformed };

inline const char* to_string(ParseErrorKind kind) {
    switch (kind) {
        case ParseErrorKind::BadMagic: return "bad magic";
        case ParseErrorKind::UnsupportedVersion: return "unsupported version";
        case ParseErrorKind::Truncated: return "truncated payload";
        case ParseErrorKind::DuplicateName: return "duplicate name";
        case ParseErrorKind::Malformed: return "malformed";
    }
    return "unknown";
}

class ParseError : public Error {
public:
    ParseError(ParseErrorKind kind, const std::string& what)
        : Error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}
    ParseErrorKind kind() const noexcept { return kind_; }

private:
    ParseErrorKind kind_;
};

class ChecksumError : public Error {
public:
    using Error::Error;
};

class FingerprintError : public Error {
public:
    using Error::Error;
};

// Non-finite loss during optimization.
class DivergenceError : public Error {
public:
    DivergenceError(const std::string& what, int epoch) : Error(what), epoch_(epoch) {}
    int epoch() const noexcept { return epoch_; }

private:
    int epoch_;
};

class NumericError : public Error {
public:
    using Error::Error;
};

}  // namespace axdelta
