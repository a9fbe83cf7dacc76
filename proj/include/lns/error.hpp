#pragma once

#include <stdexcept>
#include <string>

namespace lns {

/// Base class for every error thrown by this library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// A caller-supplied value violates an operation's contract.
struct InvalidArgument : Error {
    using Error::Error;
};

/// Requested file does not exist or cannot be opened.
struct FileNotFound : Error {
    using Error::Error;
};

/// File exists but is not one of the supported formats.
struct UnsupportedFormat : Error {
    using Error::Error;
};

/// File is recognized but its contents are damaged or truncated.
struct CorruptData : Error {
    using Error::Error;
};

/// Model file magic or version does not match this build.
struct FormatMismatch : Error {
    using Error::Error;
};

/// Model file ends before all declared records were read.
struct TruncatedFile : Error {
    using Error::Error;
};

/// Training produced a non-finite loss; carries where it happened.
struct Diverged : Error {
    int task_id;
    int epoch;
    Diverged(const std::string& msg, int task, int ep)
        : Error(msg), task_id(task), epoch(ep) {}
};

}  // namespace lns
