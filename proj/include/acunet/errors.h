#pragma once

#include <stdexcept>
#include <string>

namespace acunet {

// Base class for everything this library throws on contract violations.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DimensionError : Error { using Error::Error; };    // shape / axis mismatches
struct ArgumentError : Error { using Error::Error; };     // bad argument values
struct IndexError : Error { using Error::Error; };        // out-of-range indices
struct ConfigError : Error { using Error::Error; };       // invalid configurations
struct LoadError : Error { using Error::Error; };         // dataset content problems
struct CheckpointError : Error { using Error::Error; };   // checkpoint file problems
struct TrainingError : Error { using Error::Error; };     // runtime training failures
struct IoError : Error { using Error::Error; };           // OS-level file I/O failures

}  // namespace acunet
