#pragma once

#include <stdexcept>
#include <string>

namespace bioadapt {

/// Base class for every error raised by this library.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct DimensionError : Error {
    using Error::Error;
};
struct NumericError : Error {
    using Error::Error;
};
struct DegenerateVectorError : Error {
    using Error::Error;
};
struct ConfigError : Error {
    using Error::Error;
};
struct ContractError : Error {
    using Error::Error;
};
struct LabelError : Error {
    using Error::Error;
};
struct VocabularyError : Error {
    using Error::Error;
};
struct SpecError : Error {
    using Error::Error;
};
struct AlignmentError : Error {
    using Error::Error;
};
struct SamplingError : Error {
    using Error::Error;
};
struct DecodingError : Error {
    using Error::Error;
};
struct DivergenceError : Error {
    using Error::Error;
};
struct MetricError : Error {
    using Error::Error;
};
struct UndefinedScoreError : Error {
    using Error::Error;
};
struct InputError : Error {
    using Error::Error;
};
/// Artifact does not match what the command expects (e.g. checkpoint geometry).
struct ArtifactError : Error {
    using Error::Error;
};

}  // namespace bioadapt
