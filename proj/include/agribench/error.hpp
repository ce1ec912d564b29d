#pragma once

#include <stdexcept>
#include <string>

namespace agribench {

/// Invalid configuration or command-line usage. Maps to exit code 1.
class ConfigError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent input data. Maps to exit code 2.
class DataError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

/// Non-finite values, failed convergence, degenerate statistics. Maps to exit code 3.
class NumericError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

}  // namespace agribench
