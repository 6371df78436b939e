#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace e3cm {

enum class ErrorCode {
  DegenerateInput,
  IllConditioned,
  UndefinedDistance,
  AmbiguousCheirality,
  ProjectionAtInfinity,
  InvalidArgument,
  ModelLoadError,
  ShapeMismatch,
  PreprocessError,
  ImageTooSmall,
  OutOfBounds,
  MaskShapeMismatch,
  InsufficientMatches,
  InsufficientSeedMatches,
  DegenerateCameraSpec,
  MissingFile,
  MalformedMatrix,
  MalformedRecord,
  EmptyMatches,
  IoError,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::DegenerateInput: return "DegenerateInput";
    case ErrorCode::IllConditioned: return "IllConditioned";
    case ErrorCode::UndefinedDistance: return "UndefinedDistance";
    case ErrorCode::AmbiguousCheirality: return "AmbiguousCheirality";
    case ErrorCode::ProjectionAtInfinity: return "ProjectionAtInfinity";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::ModelLoadError: return "ModelLoadError";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::PreprocessError: return "PreprocessError";
    case ErrorCode::ImageTooSmall: return "ImageTooSmall";
    case ErrorCode::OutOfBounds: return "OutOfBounds";
    case ErrorCode::MaskShapeMismatch: return "MaskShapeMismatch";
    case ErrorCode::InsufficientMatches: return "InsufficientMatches";
    case ErrorCode::InsufficientSeedMatches: return "InsufficientSeedMatches";
    case ErrorCode::DegenerateCameraSpec: return "DegenerateCameraSpec";
    case ErrorCode::MissingFile: return "MissingFile";
    case ErrorCode::MalformedMatrix: return "MalformedMatrix";
    case ErrorCode::MalformedRecord: return "MalformedRecord";
    case ErrorCode::EmptyMatches: return "EmptyMatches";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

// Every failure raised by the library carries one of the codes above.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace e3cm
