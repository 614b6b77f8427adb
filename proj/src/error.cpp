#include "contracon/error.h"

namespace contracon {

std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::shape: return "shape error";
        case ErrorCode::config: return "configuration error";
        case ErrorCode::data: return "data error";
        case ErrorCode::usage: return "usage error";
        case ErrorCode::format: return "format error";
        case ErrorCode::io: return "io error";
        case ErrorCode::bad_magic: return "bad magic";
        case ErrorCode::version_mismatch: return "version mismatch";
        case ErrorCode::truncated: return "truncated record";
        case ErrorCode::config_mismatch: return "config mismatch";
    }
    return "error";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

}  // namespace contracon
