#include "mqenet/error.hpp"

namespace mqenet {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedHeader: return "MalformedHeader";
    case ErrorCode::TruncatedData: return "TruncatedData";
    case ErrorCode::NonFiniteCoordinate: return "NonFiniteCoordinate";
    case ErrorCode::SchemaError: return "SchemaError";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::DegenerateTriangle: return "DegenerateTriangle";
    case ErrorCode::DegenerateCell: return "DegenerateCell";
    case ErrorCode::DomainError: return "DomainError";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::NonPositiveRadius: return "NonPositiveRadius";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::EmptySegment: return "EmptySegment";
    case ErrorCode::NonScalarLoss: return "NonScalarLoss";
    case ErrorCode::TapeConsumed: return "TapeConsumed";
    case ErrorCode::NondeterministicFunction: return "NondeterministicFunction";
    case ErrorCode::EmptyGraph: return "EmptyGraph";
    case ErrorCode::DatasetTooSmall: return "DatasetTooSmall";
    case ErrorCode::MixedFeatureWidth: return "MixedFeatureWidth";
    case ErrorCode::InvalidTarget: return "InvalidTarget";
    case ErrorCode::UnnormalizedInput: return "UnnormalizedInput";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::EmptySplit: return "EmptySplit";
    case ErrorCode::DimensionTooSmall: return "DimensionTooSmall";
    case ErrorCode::DefectCollapse: return "DefectCollapse";
    case ErrorCode::MissingManifest: return "MissingManifest";
    case ErrorCode::NoParsableFiles: return "NoParsableFiles";
    case ErrorCode::IoError: return "IoError";
  }
  return "UnknownError";
}

}  // namespace mqenet
