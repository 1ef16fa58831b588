#pragma once

#include <stdexcept>
#include <string>

namespace uavloc {

enum class Errc {
  kGimbalLock,
  kBehindCamera,
  kInvalidDepth,
  kInvalidSpec,
  kInvalidArgument,
  kOutOfBounds,
  kIoError,
  kParseError,
  kMissingFile,
  kEmptyImage,
  kImageTooSmall,
  kEmptyCandidates,
  kNoValidDepth,
  kEmptyResults,
  kUnknownReference,
  kDegenerateConfiguration,
  kNoRealSolution,
  kTooFewCorrespondences,
  kNoModelFound,
  kSingularNormalEquations,
  kRayMiss,
  kNoMatchedSamples,
  kEmptyInput,
};

inline const char* errc_name(Errc code) {
  switch (code) {
    case Errc::kGimbalLock: return "GimbalLock";
    case Errc::kBehindCamera: return "BehindCamera";
    case Errc::kInvalidDepth: return "InvalidDepth";
    case Errc::kInvalidSpec: return "InvalidSpec";
    case Errc::kInvalidArgument: return "InvalidArgument";
    case Errc::kOutOfBounds: return "OutOfBounds";
    case Errc::kIoError: return "IoError";
    case Errc::kParseError: return "ParseError";
    case Errc::kMissingFile: return "MissingFile";
    case Errc::kEmptyImage: return "EmptyImage";
    case Errc::kImageTooSmall: return "ImageTooSmall";
    case Errc::kEmptyCandidates: return "EmptyCandidates";
    case Errc::kNoValidDepth: return "NoValidDepth";
    case Errc::kEmptyResults: return "EmptyResults";
    case Errc::kUnknownReference: return "UnknownReference";
    case Errc::kDegenerateConfiguration: return "DegenerateConfiguration";
    case Errc::kNoRealSolution: return "NoRealSolution";
    case Errc::kTooFewCorrespondences: return "TooFewCorrespondences";
    case Errc::kNoModelFound: return "NoModelFound";
    case Errc::kSingularNormalEquations: return "SingularNormalEquations";
    case Errc::kRayMiss: return "RayMiss";
    case Errc::kNoMatchedSamples: return "NoMatchedSamples";
    case Errc::kEmptyInput: return "EmptyInput";
  }
  return "Unknown";
}

// Every failure raised by the library carries one of the codes above so that
// callers (and the CLI exit-status mapping) can branch on it.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(std::string(errc_name(code)) + ": " + message), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace uavloc
