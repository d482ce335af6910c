#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace scot {

enum class ErrorCode {
    InvalidArgument,
    PlacementFailure,
    RemoteUnavailable,
    ProtocolError,
    TapeExhausted,
    CropOutOfBounds,
    JudgeUnavailable,
    VersionError,
    ParseError,
    AlignmentError,
    NumericalError,
    IoError,
};

constexpr std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::PlacementFailure: return "PlacementFailure";
    case ErrorCode::RemoteUnavailable: return "RemoteUnavailable";
    case ErrorCode::ProtocolError: return "ProtocolError";
    case ErrorCode::TapeExhausted: return "TapeExhausted";
    case ErrorCode::CropOutOfBounds: return "CropOutOfBounds";
    case ErrorCode::JudgeUnavailable: return "JudgeUnavailable";
    case ErrorCode::VersionError: return "VersionError";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::AlignmentError: return "AlignmentError";
    case ErrorCode::NumericalError: return "NumericalError";
    case ErrorCode::IoError: return "IoError";
    }
    return "Unknown";
}

/// Base exception for every failure the library reports. The code is stable
/// and machine-readable; the message is for humans.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

/// Raised by chat backends. Carries the id of the request that failed.
class BackendError : public Error {
public:
    BackendError(ErrorCode code, std::string request_id, const std::string& message)
        : Error(code, "[" + request_id + "] " + message), request_id_(std::move(request_id)) {}

    const std::string& request_id() const noexcept { return request_id_; }

private:
    std::string request_id_;
};

/// Raised while decoding persisted records. `offset` is the byte position of
/// the failure within the file (or line, when no file context exists).
class ParseError : public Error {
public:
    ParseError(std::size_t offset, const std::string& message)
        : Error(ErrorCode::ParseError, "at byte " + std::to_string(offset) + ": " + message),
          offset_(offset) {}

    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

class VersionError : public Error {
public:
    VersionError(int expected, int found)
        : Error(ErrorCode::VersionError, "reader supports schema version " + std::to_string(expected) +
                                             ", record has version " + std::to_string(found)),
          expected_(expected), found_(found) {}

    int expected() const noexcept { return expected_; }
    int found() const noexcept { return found_; }

private:
    int expected_;
    int found_;
};

}  // namespace scot
