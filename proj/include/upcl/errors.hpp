#pragma once

#include <stdexcept>
#include <string>

namespace upcl {

// One exception type per contract failure so callers (and tests) can catch
// the specific condition instead of parsing messages.

struct CapacityExceeded : std::runtime_error {
    explicit CapacityExceeded(const std::string& what) : std::runtime_error(what) {}
};

struct TooFewRows : std::runtime_error {
    explicit TooFewRows(const std::string& what) : std::runtime_error(what) {}
};

struct DimensionMismatch : std::runtime_error {
    explicit DimensionMismatch(const std::string& what) : std::runtime_error(what) {}
};

struct InfeasibleShape : std::runtime_error {
    explicit InfeasibleShape(const std::string& what) : std::runtime_error(what) {}
};

struct NotEnoughPrototypes : std::runtime_error {
    explicit NotEnoughPrototypes(const std::string& what) : std::runtime_error(what) {}
};

struct UnassignedClass : std::runtime_error {
    explicit UnassignedClass(const std::string& what) : std::runtime_error(what) {}
};

struct MissingPrior : std::runtime_error {
    explicit MissingPrior(const std::string& what) : std::runtime_error(what) {}
};

struct MissingTeacher : std::runtime_error {
    explicit MissingTeacher(const std::string& what) : std::runtime_error(what) {}
};

struct StaleCache : std::runtime_error {
    explicit StaleCache(const std::string& what) : std::runtime_error(what) {}
};

struct EmptyInput : std::runtime_error {
    explicit EmptyInput(const std::string& what) : std::runtime_error(what) {}
};

struct CapacityZero : std::runtime_error {
    explicit CapacityZero(const std::string& what) : std::runtime_error(what) {}
};

struct ZeroCount : std::runtime_error {
    explicit ZeroCount(const std::string& what) : std::runtime_error(what) {}
};

struct BadMagic : std::runtime_error {
    explicit BadMagic(const std::string& what) : std::runtime_error(what) {}
};

struct CountMismatch : std::runtime_error {
    explicit CountMismatch(const std::string& what) : std::runtime_error(what) {}
};

struct TruncatedFile : std::runtime_error {
    explicit TruncatedFile(const std::string& what) : std::runtime_error(what) {}
};

struct IndivisibleSplit : std::runtime_error {
    explicit IndivisibleSplit(const std::string& what) : std::runtime_error(what) {}
};

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace upcl
