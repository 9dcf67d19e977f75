#pragma once
#include <cstdlib>
#include <stdexcept>
#include <string>

namespace mind {

struct FormatError : std::runtime_error { using std::runtime_error::runtime_error; };
struct DimensionError : std::runtime_error { using std::runtime_error::runtime_error; };
struct ParameterError : std::runtime_error { using std::runtime_error::runtime_error; };
struct IoError : std::runtime_error { using std::runtime_error::runtime_error; };
struct ConfigError : std::runtime_error { using std::runtime_error::runtime_error; };
struct DatasetError : std::runtime_error { using std::runtime_error::runtime_error; };

/// Worker count from MIND_THREADS; 1 (strict mode) when unset or invalid.
inline int worker_threads() {
    const char* e = std::getenv("MIND_THREADS");
    if (!e) return 1;
    char* end = nullptr;
    long v = std::strtol(e, &end, 10);
    if (end == e || v < 1) return 1;
    return static_cast<int>(v);
}

}  // namespace mind
