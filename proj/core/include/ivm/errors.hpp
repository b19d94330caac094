#pragma once

#include <stdexcept>
#include <string>

namespace ivm {

// Error categories map onto the CLI exit codes: config/usage problems,
// malformed or inconsistent input data, and numerical failures.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace ivm
