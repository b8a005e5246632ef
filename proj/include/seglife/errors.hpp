#ifndef SEGLIFE_ERRORS_HPP
#define SEGLIFE_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace seglife {

struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor/layer shape disagreement.
struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error("shape error: " + msg) {}
};

// Violated operation precondition (non-scalar loss, missing gradient, ...).
struct ContractError : Error {
    explicit ContractError(const std::string& msg) : Error("contract error: " + msg) {}
};

// Invalid configuration value; message carries the offending key path.
struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error("config error: " + msg) {}
};

// Unknown domain id or missing registry entry.
struct LookupError : Error {
    explicit LookupError(const std::string& msg) : Error("lookup error: " + msg) {}
};

// Bad parameter value (gamma <= 0, empty reference, ...).
struct ParamError : Error {
    explicit ParamError(const std::string& msg) : Error("parameter error: " + msg) {}
};

// File I/O and container-format failures, split so callers can distinguish them.
struct IoError : Error {
    explicit IoError(const std::string& msg) : Error("io error: " + msg) {}
};
struct FormatError : IoError {
    explicit FormatError(const std::string& msg) : IoError("bad format: " + msg) {}
};
struct VersionError : IoError {
    explicit VersionError(const std::string& msg) : IoError("version mismatch: " + msg) {}
};
struct TruncatedError : IoError {
    explicit TruncatedError(const std::string& msg) : IoError("truncated file: " + msg) {}
};
struct ChecksumError : IoError {
    explicit ChecksumError(const std::string& msg) : IoError("checksum failure: " + msg) {}
};

} // namespace seglife

#endif
