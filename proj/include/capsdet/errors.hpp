#pragma once

#include <stdexcept>
#include <string>

namespace capsdet {

// Shape disagreement between tensor operands.
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error("shape error: " + msg) {}
};

// Math domain violation (log/sqrt of negative, etc).
struct DomainError : std::runtime_error {
    explicit DomainError(const std::string& msg) : std::runtime_error("domain error: " + msg) {}
};

// API contract violation (caller bug, not data).
struct ContractError : std::logic_error {
    explicit ContractError(const std::string& msg) : std::logic_error("contract error: " + msg) {}
};

// NaN/Inf escaped a numeric operation.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error("numeric error: " + msg) {}
};

// Malformed file content (bad magic, truncation, checksum).
struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& msg) : std::runtime_error("format error: " + msg) {}
};

// File system level failure.
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error("io error: " + msg) {}
};

}  // namespace capsdet
