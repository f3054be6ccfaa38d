#pragma once

#include <stdexcept>
#include <string>

namespace quorum {

/// Base for every error this library raises on purpose.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid run/backend configuration, dataset, or report file.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Malformed mock script (bad probabilities, distributions not normalized).
class ScriptError : public Error {
public:
    using Error::Error;
};

/// Network-level failure: connect/timeout/5xx. Retryable.
class TransportError : public Error {
public:
    using Error::Error;
};

/// The remote spoke HTTP but the exchange is unusable (4xx, bad payload).
/// Not retryable.
class ProtocolError : public Error {
public:
    ProtocolError(const std::string& what, int status = 0)
        : Error(what), status_(status) {}
    int status() const { return status_; }

private:
    int status_;
};

/// Backend does not support teacher-forced scoring.
class ScoringUnsupportedError : public Error {
public:
    using Error::Error;
};

/// context + completion exceeds the model window.
class ContextOverflowError : public Error {
public:
    using Error::Error;
};

/// Mock backend has no script entry for the request.
class UnscriptedError : public Error {
public:
    using Error::Error;
};

}  // namespace quorum
