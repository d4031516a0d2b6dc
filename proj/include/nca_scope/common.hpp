#pragma once

#include <cstdint>
#include <cstring>
#include <functional>
#include <istream>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace nca_scope {

inline constexpr std::string_view kVersion = "0.3.0";

// Error hierarchy. Everything thrown by the library derives from Error so the
// CLI can map failures onto exit codes without string matching.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Caller broke a precondition (shape mismatch, bad argument).
class ContractError : public Error {
public:
    using Error::Error;
};

/// Event script or rectangle does not fit the grid.
class ValidationError : public Error {
public:
    using Error::Error;
};

class FormatError : public Error {
public:
    using Error::Error;
};
class CorruptHeaderError : public FormatError {
public:
    using FormatError::FormatError;
};
class TruncatedError : public FormatError {
public:
    using FormatError::FormatError;
};
class VersionMismatchError : public FormatError {
public:
    using FormatError::FormatError;
};

/// Optimisation produced a non-finite loss or violated a model constraint.
class TrainingError : public Error {
public:
    TrainingError(const std::string& what, long epoch)
        : Error(what + " (epoch " + std::to_string(epoch) + ")"), epoch_(epoch) {}
    long epoch() const noexcept { return epoch_; }

private:
    long epoch_;
};

/// Persistence computation would exceed its simplex budget.
class CapacityError : public Error {
public:
    using Error::Error;
};

/// Experiment document is malformed or references a path nothing produces.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// A pipeline stage failed; what() names the stage and the cause.
class StageError : public Error {
public:
    StageError(const std::string& stage, const std::string& cause)
        : Error("stage '" + stage + "' failed: " + cause), stage_(stage) {}
    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

// ---------------------------------------------------------------------------
// Counter-based randomness. Every draw is a pure function of its key so results
// never depend on evaluation order or thread count.

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t hash_key(std::uint64_t a) noexcept { return splitmix64(a); }

template <typename... Rest>
constexpr std::uint64_t hash_key(std::uint64_t a, std::uint64_t b, Rest... rest) noexcept {
    return hash_key(splitmix64(a) ^ (b + 0x632BE59BD9B4E019ULL), static_cast<std::uint64_t>(rest)...);
}

/// Uniform double in [0, 1) from a 64-bit hash.
constexpr double unit_from_hash(std::uint64_t h) noexcept {
    return static_cast<double>(h >> 11) * 0x1.0p-53;
}

// ---------------------------------------------------------------------------
// Little-endian binary helpers for the headered file formats.

namespace binio {

template <typename T>
void write(std::ostream& out, const T& value) {
    static_assert(std::is_trivially_copyable_v<T>);
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
void write_array(std::ostream& out, std::span<const T> values) {
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size_bytes()));
}

template <typename T>
T read(std::istream& in, std::string_view what) {
    T value{};
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (in.gcount() != static_cast<std::streamsize>(sizeof(T)))
        throw TruncatedError("truncated while reading " + std::string(what));
    return value;
}

template <typename T>
void read_array(std::istream& in, std::span<T> values, std::string_view what) {
    in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
    if (in.gcount() != static_cast<std::streamsize>(values.size_bytes()))
        throw TruncatedError("truncated while reading " + std::string(what));
}

void write_magic(std::ostream& out, std::string_view magic);
void expect_magic(std::istream& in, std::string_view magic);

}  // namespace binio

/// 64-bit FNV-1a, used for manifest content hashes and model fingerprints.
std::uint64_t fnv1a64(std::span<const std::byte> bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a64_file(const std::string& path);
std::string hex64(std::uint64_t value);

/// Worker count from NCA_SCOPE_THREADS (default 1).
int thread_count();

/// Runs body(i) for i in [0, n). Results must be written to per-index slots;
/// callers reduce afterwards in index order.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace nca_scope
