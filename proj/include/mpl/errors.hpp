#pragma once

#include <stdexcept>
#include <string>

namespace mpl {

// Bad configuration values or incompatible option combinations. CLI exit code 2.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed or inconsistent input data (corpus files, checkpoints, CSVs). CLI exit code 3.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite losses or gradients during optimization. CLI exit code 4.
class DivergenceError : public std::runtime_error {
 public:
  explicit DivergenceError(const std::string& msg) : std::runtime_error(msg) {}
};

// Target label sequence has no compatible alignment path of the given length.
// The labeled-data trainer treats this as an annotation bug; the pseudo-label
// path catches it and skips the utterance.
class InfeasibleTarget : public std::runtime_error {
 public:
  explicit InfeasibleTarget(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace mpl
