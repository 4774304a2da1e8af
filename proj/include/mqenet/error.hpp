#pragma once

#include <stdexcept>
#include <string>

namespace mqenet {

enum class ErrorCode {
  MalformedHeader,
  TruncatedData,
  NonFiniteCoordinate,
  SchemaError,
  LengthMismatch,
  DegenerateTriangle,
  DegenerateCell,
  DomainError,
  IndexOutOfRange,
  NonPositiveRadius,
  DimensionMismatch,
  ShapeMismatch,
  EmptySegment,
  NonScalarLoss,
  TapeConsumed,
  NondeterministicFunction,
  EmptyGraph,
  DatasetTooSmall,
  MixedFeatureWidth,
  InvalidTarget,
  UnnormalizedInput,
  NonFiniteLoss,
  EmptySplit,
  DimensionTooSmall,
  DefectCollapse,
  MissingManifest,
  NoParsableFiles,
  IoError,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + what),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace mqenet
