#pragma once

#include <stdexcept>
#include <string>

namespace specmap {

// Bad inputs, schema violations, missing files. CLI maps these to exit 2.
struct ValidationError : std::runtime_error {
    explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

struct IoError : ValidationError {
    explicit IoError(const std::string& what) : ValidationError(what) {}
};

// Non-finite losses and similar numerical breakdowns. CLI maps to exit 3.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace specmap
