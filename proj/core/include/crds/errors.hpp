#pragma once

#include <stdexcept>
#include <string>

namespace crds {

// Unreadable/unparseable container or sidecar.
struct FormatError : std::runtime_error {
  explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

// File parses but its payload contradicts its header.
struct CorruptionError : std::runtime_error {
  explicit CorruptionError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

struct InvalidArgument : std::invalid_argument {
  explicit InvalidArgument(const std::string& msg) : std::invalid_argument(msg) {}
};

// Training/pretraining loss became non-finite.
struct DivergenceError : std::runtime_error {
  explicit DivergenceError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace crds
