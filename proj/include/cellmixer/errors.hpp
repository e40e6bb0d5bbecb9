#pragma once

#include <stdexcept>
#include <string>

namespace cellmixer {

// Error taxonomy mirrors the CLI exit codes: ParameterError -> 1,
// DataError (and DegenerateInputError) -> 2, TrainingError -> 3.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ParameterError : public Error {
public:
    using Error::Error;
};

class DataError : public Error {
public:
    using Error::Error;
};

class DegenerateInputError : public DataError {
public:
    using DataError::DataError;
};

class TrainingError : public Error {
public:
    using Error::Error;
};

} // namespace cellmixer
