#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cropcast {

/// Failure categories raised by the library. Every thrown `Error` carries one.
enum class Errc {
  NoOverlap,
  GridMismatch,
  HeaderMismatch,
  ParseError,
  NegativeQuantity,
  InvalidConfig,
  ZeroProduction,
  EmptyStack,
  EmptyWindow,
  EmptyDataset,
  DimensionMismatch,
  InsufficientHistory,
  DivergenceDetected,
  LengthMismatch,
  EmptyInput,
  ZeroBaseline,
  AllZero,
  IoError,
};

inline constexpr std::string_view to_string(Errc code) noexcept {
  switch (code) {
    case Errc::NoOverlap: return "NoOverlap";
    case Errc::GridMismatch: return "GridMismatch";
    case Errc::HeaderMismatch: return "HeaderMismatch";
    case Errc::ParseError: return "ParseError";
    case Errc::NegativeQuantity: return "NegativeQuantity";
    case Errc::InvalidConfig: return "InvalidConfig";
    case Errc::ZeroProduction: return "ZeroProduction";
    case Errc::EmptyStack: return "EmptyStack";
    case Errc::EmptyWindow: return "EmptyWindow";
    case Errc::EmptyDataset: return "EmptyDataset";
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::InsufficientHistory: return "InsufficientHistory";
    case Errc::DivergenceDetected: return "DivergenceDetected";
    case Errc::LengthMismatch: return "LengthMismatch";
    case Errc::EmptyInput: return "EmptyInput";
    case Errc::ZeroBaseline: return "ZeroBaseline";
    case Errc::AllZero: return "AllZero";
    case Errc::IoError: return "IoError";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  [[nodiscard]] Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace cropcast
