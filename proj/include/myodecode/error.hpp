#pragma once

#include <stdexcept>
#include <string>

namespace myodecode {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// Input carries no usable signal (e.g. an all-zero recording).
class DegenerateInput : public Error {
public:
    using Error::Error;
};

class RankDeficient : public Error {
public:
    using Error::Error;
};

/// Silhouette requested with an empty spike or non-spike cluster.
class UndefinedSil : public Error {
public:
    using Error::Error;
};

/// R² requested against a constant reference.
class UndefinedMetric : public Error {
public:
    using Error::Error;
};

/// No rotated component correlates with a DoF above the configured floor.
class UnassignedDof : public Error {
public:
    using Error::Error;
};

class FormatError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

} // namespace myodecode
