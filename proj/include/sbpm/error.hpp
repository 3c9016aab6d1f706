#pragma once

#include <stdexcept>
#include <string>

namespace sbpm {

// Base of every domain error. code() is the stable operation error name
// (e.g. "UnknownSubject"); the HTTP layer and the CLI report it verbatim.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& message)
        : std::runtime_error(message), code_(std::move(code)) {}

    const std::string& code() const noexcept { return code_; }

private:
    std::string code_;
};

}  // namespace sbpm
