#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cardiotel {

// Wire-visible error codes. The first four appear verbatim in gateway replies.
enum class ErrorCode {
    auth,
    validation,
    conflict,
    overflow,
    not_found,
    domain,
    pairing,
    parse,
    io,
    config,
    extraction,
    transport,
    orchestration,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
    throw Error(code, what);
}

} // namespace cardiotel
