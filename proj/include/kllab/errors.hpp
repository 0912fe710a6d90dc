#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace kllab {

// Base for every domain error the library raises. The CLI maps subclasses to
// exit codes, so keep them distinct rather than reusing std:: exceptions.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidDistribution : public Error {
public:
    using Error::Error;
};

// Support violation in a KL evaluation (p puts mass where q has none).
class InfiniteDivergence : public Error {
public:
    using Error::Error;
};

class InvalidCoefficient : public Error {
public:
    using Error::Error;
};

class SolverFailure : public Error {
public:
    using Error::Error;
};

class UndefinedRatio : public Error {
public:
    using Error::Error;
};

class NoFiniteFlip : public Error {
public:
    enum class Reason { SameIndex, EqualReference, NonPositive };

    NoFiniteFlip(Reason reason, const std::string& what) : Error(what), reason_(reason) {}

    Reason reason() const noexcept { return reason_; }

private:
    Reason reason_;
};

class InvalidAnchor : public Error {
public:
    using Error::Error;
};

class NonFiniteGradient : public Error {
public:
    using Error::Error;
};

class InvalidPartition : public Error {
public:
    using Error::Error;
};

class IoFailure : public Error {
public:
    using Error::Error;
};

class PreconditionViolation : public Error {
public:
    using Error::Error;
};

// Config-file diagnostics carry a 1-based source position.
class ConfigError : public Error {
public:
    ConfigError(std::size_t line, std::size_t column, const std::string& message)
        : Error(std::to_string(line) + ":" + std::to_string(column) + ": " + message),
          line_(line),
          column_(column) {}

    std::size_t line() const noexcept { return line_; }
    std::size_t column() const noexcept { return column_; }

private:
    std::size_t line_;
    std::size_t column_;
};

}  // namespace kllab
