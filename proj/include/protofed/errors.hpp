#pragma once

#include <stdexcept>
#include <string>

namespace protofed {

// Caller violated an operation's precondition (shape mismatch, bad argument).
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Experiment or loss configuration is invalid or inconsistent.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// CSV or binary input could not be parsed.
class IngestionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Internal invariant broken between cooperating components.
class InternalError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace protofed
