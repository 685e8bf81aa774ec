#pragma once

#include <stdexcept>
#include <string>

namespace servesim {

// Invalid configuration or scenario input. Messages name the offending
// field path (e.g. "workload.output.sigma: must be > 0").
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// A caller broke an API precondition.
class ContractError : public std::logic_error {
public:
    explicit ContractError(const std::string& msg) : std::logic_error(msg) {}
};

// Numeric-domain failure: non-finite inputs, empty reductions.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// An exact oracle was asked to enumerate an instance too large for it.
class CapacityError : public std::runtime_error {
public:
    explicit CapacityError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace servesim
