#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace noisylab {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid argument or configuration value.
class ParameterError : public Error {
public:
    using Error::Error;
};

/// A value lies outside the mathematical domain of an operation.
class DomainError : public Error {
public:
    using Error::Error;
};

/// Unknown id, class, or epoch index.
class LookupError : public Error {
public:
    using Error::Error;
};

/// A brute-force enumeration would exceed its size guard.
class SizeError : public Error {
public:
    using Error::Error;
};

/// Training produced a non-finite loss. Carries the offending epoch (1-based).
class DivergedError : public Error {
public:
    DivergedError(const std::string& message, std::size_t epoch)
        : Error(message), epoch_(epoch) {}
    std::size_t epoch() const { return epoch_; }

private:
    std::size_t epoch_;
};

/// Filesystem failure while persisting or loading artifacts.
class IoError : public Error {
public:
    using Error::Error;
};

} // namespace noisylab
