#pragma once

#include <stdexcept>
#include <string>

namespace modereg {

inline constexpr const char* kVersion = "0.1.0";

// Error hierarchy. The CLI maps each category to a distinct exit code.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ConfigError : Error {
    using Error::Error;
};
struct DataError : Error {
    using Error::Error;
};
struct NumericError : Error {
    using Error::Error;
};
struct IoError : Error {
    using Error::Error;
};

}  // namespace modereg
