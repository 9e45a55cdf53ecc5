#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace distill {

// Base class for everything thrown by this library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Matrix/vector dimension mismatches. No broadcasting anywhere: every
// mismatch is a hard error.
class ShapeError : public Error {
public:
    using Error::Error;
};

// Invalid scalar arguments: non-positive temperature, fraction out of
// range, bad smoothing epsilon, and similar.
class ArgumentError : public Error {
public:
    using Error::Error;
};

// Class label outside [0, K).
class LabelError : public Error {
public:
    using Error::Error;
};

// Malformed input file (bad IDX magic, unparsable CSV cell).
class FormatError : public Error {
public:
    using Error::Error;
};

// Structurally valid inputs that disagree with each other
// (image/label count mismatch).
class ConsistencyError : public Error {
public:
    using Error::Error;
};

// Filesystem-level failures: missing file, truncated read, failed write.
class IoError : public Error {
public:
    using Error::Error;
};

// Operation used with stale or inconsistent internal state
// (e.g. backward() with a trace from a different batch shape).
class StateError : public Error {
public:
    using Error::Error;
};

// Experiment configuration errors: unknown fields, missing keys,
// invalid combinations (distillation mode without a teacher).
class ConfigError : public Error {
public:
    using Error::Error;
};

// Training produced a non-finite loss. Carries the epoch it happened in.
class DivergenceError : public Error {
public:
    DivergenceError(const std::string& msg, std::size_t epoch)
        : Error(msg), epoch_(epoch) {}
    std::size_t epoch() const { return epoch_; }

private:
    std::size_t epoch_ = 0;
};

// An ensemble member assigned probability zero (log-probability -inf)
// where the decomposition needs a finite logarithm.
class DegenerateOutputError : public Error {
public:
    using Error::Error;
};

}  // namespace distill
