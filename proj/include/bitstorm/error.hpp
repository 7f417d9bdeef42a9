#pragma once

#include <stdexcept>
#include <string>

namespace bitstorm {

/// Raised when tensors or layer extents do not chain.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class FormatErrc {
  io,
  bad_magic,
  malformed_header,
  unsupported_version,
  payload_length_mismatch,
  shape_mismatch,
  non_finite_value,
  invalid_value,
};

inline const char* to_string(FormatErrc code) {
  switch (code) {
    case FormatErrc::io: return "io error";
    case FormatErrc::bad_magic: return "bad magic";
    case FormatErrc::malformed_header: return "malformed header";
    case FormatErrc::unsupported_version: return "unsupported version";
    case FormatErrc::payload_length_mismatch: return "payload length mismatch";
    case FormatErrc::shape_mismatch: return "shape mismatch";
    case FormatErrc::non_finite_value: return "non-finite value";
    case FormatErrc::invalid_value: return "invalid value";
  }
  return "unknown";
}

/// Container (model or dataset file) decoding failure with a machine-checkable code.
class FormatError : public std::runtime_error {
 public:
  FormatError(FormatErrc code, const std::string& detail)
      : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code) {}

  FormatErrc code() const noexcept { return code_; }

 private:
  FormatErrc code_;
};

/// Training aborted (non-finite loss and similar).
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace bitstorm
