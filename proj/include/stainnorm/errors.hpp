#pragma once

#include <stdexcept>
#include <string>

namespace stainnorm {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DimensionMismatch : public Error {
public:
    using Error::Error;
};

class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// Raster decode/encode failures (missing file, truncated data, bit depth).
class ImageIoError : public Error {
public:
    using Error::Error;
};

class RankDeficient : public Error {
public:
    using Error::Error;
};

/// No pixel passed the optical-density background cutoff.
class NoTissue : public Error {
public:
    using Error::Error;
};

/// Tissue optical densities span fewer than two independent directions.
class DegenerateStains : public Error {
public:
    using Error::Error;
};

class NonConvergence : public Error {
public:
    using Error::Error;
};

class WeightFormatError : public Error {
public:
    using Error::Error;
};

/// A whole-slide patch could not be processed; the message names its grid position.
class PatchFailed : public Error {
public:
    PatchFailed(int row, int col, const std::string& what)
        : Error("patch (row " + std::to_string(row) + ", col " + std::to_string(col) + "): " + what),
          row_(row),
          col_(col) {}

    int row() const { return row_; }
    int col() const { return col_; }

private:
    int row_;
    int col_;
};

}  // namespace stainnorm
