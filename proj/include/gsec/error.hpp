#pragma once

#include <stdexcept>
#include <string>

namespace gsec {

// All library failures derive from Error so callers (the CLI in particular)
// can map a whole family to one exit code.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Input data problems: unreadable files, malformed records, mismatched sizes.
class DataError : public Error {
public:
    using Error::Error;
};

class IoError : public DataError {
public:
    using DataError::DataError;
};

class FormatError : public DataError {
public:
    using DataError::DataError;
};

class LengthMismatch : public DataError {
public:
    using DataError::DataError;
};

class InvalidParam : public Error {
public:
    using Error::Error;
};

class EmptyHistogram : public Error {
public:
    using Error::Error;
};

class EmptyCloud : public Error {
public:
    using Error::Error;
};

class TooFewPoints : public Error {
public:
    using Error::Error;
};

class Degenerate : public Error {
public:
    using Error::Error;
};

class MissingNormals : public Error {
public:
    using Error::Error;
};

class NoLabels : public DataError {
public:
    using DataError::DataError;
};

class ShapeMismatch : public Error {
public:
    using Error::Error;
};

class EmptyDataset : public DataError {
public:
    using DataError::DataError;
};

class CheckpointMismatch : public DataError {
public:
    using DataError::DataError;
};

class EmptyCounts : public Error {
public:
    using Error::Error;
};

// An artifact was produced under a different configuration than the one in
// effect.
class ConfigConflict : public Error {
public:
    using Error::Error;
};

}  // namespace gsec
