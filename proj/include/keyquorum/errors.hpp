#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace kq {

enum class Errc {
  InvalidArgument,
  ModulusMismatch,
  ZeroInverse,
  EntropyFailure,
  InsufficientShares,
  DuplicateIndex,
  InsufficientValidShares,
  ParameterValidation,
  AuthenticationFailed,
  TooManySessions,
  UnknownSession,
  SessionExpired,
  InvalidSessionState,
  SessionNotUnlocked,
  VerifierMismatch,
  IntegrityFailure,
  ReplayDetected,
  Misaddressed,
  QuorumTimeout,
  ParseError,
  IoError,
};

constexpr std::string_view to_string(Errc code) noexcept {
  switch (code) {
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::ModulusMismatch: return "ModulusMismatch";
    case Errc::ZeroInverse: return "ZeroInverse";
    case Errc::EntropyFailure: return "EntropyFailure";
    case Errc::InsufficientShares: return "InsufficientShares";
    case Errc::DuplicateIndex: return "DuplicateIndex";
    case Errc::InsufficientValidShares: return "InsufficientValidShares";
    case Errc::ParameterValidation: return "ParameterValidation";
    case Errc::AuthenticationFailed: return "AuthFailed";
    case Errc::TooManySessions: return "TooManySessions";
    case Errc::UnknownSession: return "UnknownSession";
    case Errc::SessionExpired: return "SessionExpired";
    case Errc::InvalidSessionState: return "InvalidSessionState";
    case Errc::SessionNotUnlocked: return "SessionNotUnlocked";
    case Errc::VerifierMismatch: return "VerifierMismatch";
    case Errc::IntegrityFailure: return "IntegrityFailure";
    case Errc::ReplayDetected: return "ReplayDetected";
    case Errc::Misaddressed: return "Misaddressed";
    case Errc::QuorumTimeout: return "QuorumTimeout";
    case Errc::ParseError: return "ParseError";
    case Errc::IoError: return "IoError";
  }
  return "Unknown";
}

inline Errc errc_from_string(std::string_view name) {
  for (int i = 0; i <= static_cast<int>(Errc::IoError); ++i) {
    auto code = static_cast<Errc>(i);
    if (to_string(code) == name) return code;
  }
  throw std::invalid_argument("unknown error code: " + std::string(name));
}

/// Base exception for every failure raised by the library. The code is the
/// stable, machine-readable part; the message is for humans.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

/// Raised when fewer than k shares survive commitment verification.
class InsufficientValidSharesError : public Error {
 public:
  InsufficientValidSharesError(std::vector<std::uint32_t> culprits, const std::string& what)
      : Error(Errc::InsufficientValidShares, what), culprits_(std::move(culprits)) {}

  const std::vector<std::uint32_t>& culprits() const noexcept { return culprits_; }

 private:
  std::vector<std::uint32_t> culprits_;
};

}  // namespace kq
