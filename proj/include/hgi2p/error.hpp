#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace hgi2p {

enum class ErrorCode {
  InsufficientCorrespondences,
  DegenerateConfiguration,
  NoConsensus,
  InvalidArgument,
  ShapeMismatch,
  EmptyMatch,
  NoPositives,
  NonFiniteLoss,
  RetryExhausted,
  ParseError,
  IoError,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InsufficientCorrespondences: return "InsufficientCorrespondences";
    case ErrorCode::DegenerateConfiguration: return "DegenerateConfiguration";
    case ErrorCode::NoConsensus: return "NoConsensus";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::EmptyMatch: return "EmptyMatch";
    case ErrorCode::NoPositives: return "NoPositives";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::RetryExhausted: return "RetryExhausted";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

/// Exception carrying a machine-checkable error code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace hgi2p
