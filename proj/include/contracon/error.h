#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace contracon {

enum class ErrorCode {
    shape,
    config,
    data,
    usage,
    format,
    io,
    bad_magic,
    version_mismatch,
    truncated,
    config_mismatch,
};

std::string_view to_string(ErrorCode code);

// Every failure raised by the library carries one of the codes above so that
// callers (tests, the CLI) can branch on the category without parsing text.
class Error : public std::runtime_error {
   public:
    Error(ErrorCode code, const std::string& message);

    ErrorCode code() const noexcept { return code_; }

   private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) { throw Error(code, message); }

}  // namespace contracon
