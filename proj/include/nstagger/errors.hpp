#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace nstagger {

/// Base of every error raised by the library. The category string is what
/// the CLI prints before the message.
class Error : public std::runtime_error {
public:
    Error(std::string category, const std::string& what)
        : std::runtime_error(what), category_(std::move(category)) {}
    const std::string& category() const noexcept { return category_; }

private:
    std::string category_;
};

struct DimensionError : Error {
    explicit DimensionError(const std::string& w) : Error("dimension", w) {}
};

struct ShapeError : Error {
    explicit ShapeError(const std::string& w) : Error("shape", w) {}
};

struct LayoutError : Error {
    explicit LayoutError(const std::string& w) : Error("layout", w) {}
};

struct ContractError : Error {
    explicit ContractError(const std::string& w) : Error("contract", w) {}
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& w) : Error("config", w) {}
};

struct SolverError : Error {
    explicit SolverError(const std::string& w) : Error("solver", w) {}
};

struct TrainingError : Error {
    explicit TrainingError(const std::string& w) : Error("training", w) {}
};

struct MetricError : Error {
    explicit MetricError(const std::string& w) : Error("metric", w) {}
};

/// Snapshot decoding failure; `offset` is the byte position where decoding stopped.
class FormatError : public Error {
public:
    FormatError(const std::string& w, std::uint64_t offset)
        : Error("format", w + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
    std::uint64_t offset() const noexcept { return offset_; }

private:
    std::uint64_t offset_;
};

} // namespace nstagger
