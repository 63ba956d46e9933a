#pragma once

#include <stdexcept>
#include <string>

namespace latentlab {

// Error families shared by all modules. Each maps to one failure class in the
// public API so callers (and the CLI exit-code logic) can tell them apart.

struct VocabularyError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct RangeError : std::out_of_range {
    using std::out_of_range::out_of_range;
};

struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct CodecUnsoundError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct StateError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TransportError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace latentlab
