#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace drselect {

/// Base of every error raised by the toolkit.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input text. `line()` is 1-based, 0 when not tied to a line.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t line = 0)
        : Error(line ? what + " (line " + std::to_string(line) + ")" : what), line_(line)
    {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// Well-formed input that violates a type invariant or an operation contract.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// A run-file backed retriever was asked for a query it has no results for.
class MissingQuery : public Error {
public:
    using Error::Error;
};

/// A remote backend kept failing after all retries.
class BackendUnavailable : public Error {
public:
    using Error::Error;
};

/// A baseline was asked of a pool that cannot support it.
class UnsupportedBaseline : public Error {
public:
    using Error::Error;
};

}  // namespace drselect
