#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace tsda {

// Base class for everything thrown by the library.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid argument to an operation (bad shape, bad range, unknown id, ...).
struct ArgumentError : Error {
    explicit ArgumentError(const std::string& msg) : Error(msg) {}
};

// Dataset ingestion failures, one kind per failure mode.
enum class LoadErrorKind { MissingFile, ShapeMismatch, BadLabel, BadFormat };

struct LoadError : Error {
    LoadErrorKind kind;
    LoadError(LoadErrorKind k, const std::string& msg) : Error(msg), kind(k) {}
};

// Stratified split cannot satisfy the per-class coverage guarantee.
struct SplitError : Error {
    explicit SplitError(const std::string& msg) : Error(msg) {}
};

// Segmentation preconditions violated (window larger than the signal).
struct SegmentationError : Error {
    explicit SegmentationError(const std::string& msg) : Error(msg) {}
};

// Model selection had no viable candidate.
struct SelectionError : Error {
    explicit SelectionError(const std::string& msg) : Error(msg) {}
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw ArgumentError(msg);
}

}  // namespace tsda
