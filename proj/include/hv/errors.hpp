#pragma once

#include <stdexcept>
#include <string>

namespace hv {

// Base type for every error thrown by the library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// numerics
struct DegenerateNorm : Error { using Error::Error; };
struct DimMismatch : Error { using Error::Error; };
struct NonFiniteValue : Error { using Error::Error; };

// model
struct ShapeMismatch : Error { using Error::Error; };

// losses
struct LabelOutOfRange : Error { using Error::Error; };
struct BatchTooSmall : Error { using Error::Error; };
struct TieAtKink : Error { using Error::Error; };

// trainer
struct StepOutOfRange : Error { using Error::Error; };
struct EmptyDataset : Error { using Error::Error; };
struct OddBatch : Error { using Error::Error; };
struct TooFewSubjects : Error { using Error::Error; };

// eval
struct BadK : Error { using Error::Error; };
struct EmptyScores : Error { using Error::Error; };

// synthdata / cli
struct ConfigInvalid : Error { using Error::Error; };
struct IoFailure : Error { using Error::Error; };
struct FormatVersionMismatch : Error { using Error::Error; };
struct ChecksumMismatch : Error { using Error::Error; };

// Contract violations that have no dedicated category above.
struct InvalidArgument : Error { using Error::Error; };

} // namespace hv
