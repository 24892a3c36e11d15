#pragma once

#include <charconv>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace hiforecast {

// Error hierarchy. The CLI maps ConfigError/ParseError to exit code 2
// (usage/config) and everything else to exit code 1 (numerical/data).
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class PreconditionError : public Error {
public:
    using Error::Error;
};

class InsufficientDataError : public Error {
public:
    using Error::Error;
};

class BandwidthError : public Error {
public:
    using Error::Error;
};

class NumericalError : public Error {
public:
    using Error::Error;
};

class ParseError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

// Shortest round-trip decimal representation of a double. Used by every
// writer so that reloading a file reproduces the exact value and repeated
// runs emit byte-identical output.
inline std::string format_double(double v) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

// FNV-1a, used for config provenance hashes (std::hash is not pinned).
inline std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace hiforecast
