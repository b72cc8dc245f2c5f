#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace divseq {

enum class Errc {
  // configuration
  NonDivisibleBeam,
  NegativeStrength,
  BadTemperature,
  ZeroLength,
  ZeroBeam,
  BadN,
  // vocabulary
  DuplicateToken,
  EmptyTokenList,
  InvalidTokenId,
  // scoring
  PrefixAfterEOS,
  RowLengthMismatch,
  UnnormalizedRow,
  // training
  EmptyCorpus,
  BadOrder,
  BadSmoothing,
  // model files
  FormatVersionMismatch,
  CorruptPayload,
  VocabMismatch,
  // embeddings
  InconsistentDimension,
  EmptyFile,
  NonNumericComponent,
  // search / eval
  EmptyState,
  SearchSpaceTooLarge,
  LengthMismatch,
  UnsupportedModel,
  EmptyCandidate,
  NoReferences,
  EmptyList,
  // io
  Io,
};

constexpr std::string_view errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::NonDivisibleBeam: return "NonDivisibleBeam";
    case Errc::NegativeStrength: return "NegativeStrength";
    case Errc::BadTemperature: return "BadTemperature";
    case Errc::ZeroLength: return "ZeroLength";
    case Errc::ZeroBeam: return "ZeroBeam";
    case Errc::BadN: return "BadN";
    case Errc::DuplicateToken: return "DuplicateToken";
    case Errc::EmptyTokenList: return "EmptyTokenList";
    case Errc::InvalidTokenId: return "InvalidTokenId";
    case Errc::PrefixAfterEOS: return "PrefixAfterEOS";
    case Errc::RowLengthMismatch: return "RowLengthMismatch";
    case Errc::UnnormalizedRow: return "UnnormalizedRow";
    case Errc::EmptyCorpus: return "EmptyCorpus";
    case Errc::BadOrder: return "BadOrder";
    case Errc::BadSmoothing: return "BadSmoothing";
    case Errc::FormatVersionMismatch: return "FormatVersionMismatch";
    case Errc::CorruptPayload: return "CorruptPayload";
    case Errc::VocabMismatch: return "VocabMismatch";
    case Errc::InconsistentDimension: return "InconsistentDimension";
    case Errc::EmptyFile: return "EmptyFile";
    case Errc::NonNumericComponent: return "NonNumericComponent";
    case Errc::EmptyState: return "EmptyState";
    case Errc::SearchSpaceTooLarge: return "SearchSpaceTooLarge";
    case Errc::LengthMismatch: return "LengthMismatch";
    case Errc::UnsupportedModel: return "UnsupportedModel";
    case Errc::EmptyCandidate: return "EmptyCandidate";
    case Errc::NoReferences: return "NoReferences";
    case Errc::EmptyList: return "EmptyList";
    case Errc::Io: return "Io";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above so
/// callers (and the CLI's exit-code mapping) can branch without parsing text.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace divseq
