#ifndef GPOABC_ERRORS_HPP
#define GPOABC_ERRORS_HPP

#include <stdexcept>
#include <string>
#include <string_view>

namespace gpoabc {

enum class ErrorCode {
    domain,         // argument outside the support of a model or distribution
    unsupported,    // requested branch is not implemented (e.g. alpha = 1)
    configuration,  // malformed or inconsistent configuration
    contract,       // caller violated a precondition
    numerical,      // factorisation or optimisation failed
    state,          // object used before it was ready
    io              // file parsing or writing failed
};

inline std::string_view to_string(ErrorCode code)
{
    switch (code) {
    case ErrorCode::domain: return "domain_error";
    case ErrorCode::unsupported: return "unsupported";
    case ErrorCode::configuration: return "configuration_error";
    case ErrorCode::contract: return "contract_violation";
    case ErrorCode::numerical: return "numerical_error";
    case ErrorCode::state: return "state_error";
    case ErrorCode::io: return "io_error";
    }
    return "unknown";
}

/// Every library failure is reported through this type so the CLI can map it
/// to a machine-readable code.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code)
    {
    }

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message)
{
    throw Error(code, message);
}

inline void require(bool condition, ErrorCode code, const std::string& message)
{
    if (!condition)
        fail(code, message);
}

} // namespace gpoabc

#endif
