#pragma once

#include <stdexcept>
#include <string>

namespace causalmon {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed files, invalid configuration, or data that violates a contract.
class InputError : public Error {
public:
    using Error::Error;
};

/// Constant vectors, perfect correlations and other inputs for which a
/// statistic is undefined.
class DegenerateInput : public Error {
public:
    using Error::Error;
};

/// Normal equations that cannot be solved without regularization.
class SingularSystem : public Error {
public:
    using Error::Error;
};

class InsufficientSamples : public Error {
public:
    using Error::Error;
};

/// Raised when a stop-on-first stream receives a sample after its alarm.
class StreamStopped : public Error {
public:
    using Error::Error;
};

}  // namespace causalmon
