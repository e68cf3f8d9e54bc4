#include "cirsynth/error.hpp"

namespace cirsynth {

std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::ZeroVector: return "ZeroVector";
        case ErrorCode::DimMismatch: return "DimMismatch";
        case ErrorCode::NonFinite: return "NonFinite";
        case ErrorCode::InvalidArgument: return "InvalidArgument";
        case ErrorCode::InvalidConfig: return "InvalidConfig";
        case ErrorCode::ProviderTimeout: return "ProviderTimeout";
        case ErrorCode::ProviderMalformedResponse: return "ProviderMalformedResponse";
        case ErrorCode::EmptyCompletion: return "EmptyCompletion";
        case ErrorCode::EmptyCaption: return "EmptyCaption";
        case ErrorCode::EncoderNotLoaded: return "EncoderNotLoaded";
        case ErrorCode::InvalidSubgroup: return "InvalidSubgroup";
        case ErrorCode::UnfilteredTriplet: return "UnfilteredTriplet";
        case ErrorCode::BatchMismatch: return "BatchMismatch";
        case ErrorCode::EmptyGallery: return "EmptyGallery";
        case ErrorCode::MissingSubset: return "MissingSubset";
        case ErrorCode::MissingInput: return "MissingInput";
        case ErrorCode::CorruptCheckpoint: return "CorruptCheckpoint";
        case ErrorCode::VersionMismatch: return "VersionMismatch";
        case ErrorCode::MalformedRecord: return "MalformedRecord";
    }
    return "Unknown";
}

}  // namespace cirsynth
