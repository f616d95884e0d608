#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace xiqa {

enum class Errc {
    // image I/O and degradation
    UnreadableFile,
    UnsupportedFormat,
    CorruptHeader,
    UnwritableDestination,
    CropLargerThanImage,
    UnknownKind,
    LevelOutOfRange,
    EmptySourceList,
    // tensors
    ShapeMismatch,
    AxisOutOfRange,
    NonScalarLoss,
    DetachedGraph,
    NonFiniteValue,
    // model
    IndivisibleDimensions,
    ConfigMismatch,
    // training
    MissingGradient,
    ContentMismatch,
    InsufficientVariants,
    MissingScores,
    IncompatibleConfig,
    BadMagic,
    VersionUnsupported,
    TruncatedFile,
    ShapeTableMismatch,
    // evaluation
    ZeroVariance,
    TooFewReferences,
    EmptyResults,
    // configuration
    InvalidConfig,
};

inline std::string_view errc_name(Errc code) {
    switch (code) {
    case Errc::UnreadableFile: return "UnreadableFile";
    case Errc::UnsupportedFormat: return "UnsupportedFormat";
    case Errc::CorruptHeader: return "CorruptHeader";
    case Errc::UnwritableDestination: return "UnwritableDestination";
    case Errc::CropLargerThanImage: return "CropLargerThanImage";
    case Errc::UnknownKind: return "UnknownKind";
    case Errc::LevelOutOfRange: return "LevelOutOfRange";
    case Errc::EmptySourceList: return "EmptySourceList";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::AxisOutOfRange: return "AxisOutOfRange";
    case Errc::NonScalarLoss: return "NonScalarLoss";
    case Errc::DetachedGraph: return "DetachedGraph";
    case Errc::NonFiniteValue: return "NonFiniteValue";
    case Errc::IndivisibleDimensions: return "IndivisibleDimensions";
    case Errc::ConfigMismatch: return "ConfigMismatch";
    case Errc::MissingGradient: return "MissingGradient";
    case Errc::ContentMismatch: return "ContentMismatch";
    case Errc::InsufficientVariants: return "InsufficientVariants";
    case Errc::MissingScores: return "MissingScores";
    case Errc::IncompatibleConfig: return "IncompatibleConfig";
    case Errc::BadMagic: return "BadMagic";
    case Errc::VersionUnsupported: return "VersionUnsupported";
    case Errc::TruncatedFile: return "TruncatedFile";
    case Errc::ShapeTableMismatch: return "ShapeTableMismatch";
    case Errc::ZeroVariance: return "ZeroVariance";
    case Errc::TooFewReferences: return "TooFewReferences";
    case Errc::EmptyResults: return "EmptyResults";
    case Errc::InvalidConfig: return "InvalidConfig";
    }
    return "Unknown";
}

/// Single exception type for the library; `code()` identifies the failure.
class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& what)
        : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

} // namespace xiqa
