#pragma once

#include <stdexcept>
#include <string>

namespace metadagger {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Track generation exhausted its retry budget.
class GenerationError : public Error {
public:
    using Error::Error;
};

/// A value loaded or constructed violates a type invariant.
class InvariantError : public Error {
public:
    using Error::Error;
};

/// A file could not be parsed.
class FormatError : public Error {
public:
    using Error::Error;
};

class VersionError : public FormatError {
public:
    using FormatError::FormatError;
};

class DimensionError : public Error {
public:
    using Error::Error;
};

/// Training diverged or was given no data.
class TrainingError : public Error {
public:
    using Error::Error;
};

/// Expert failed the closed-loop competence gate on a training track.
class CompetenceError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

}  // namespace metadagger
