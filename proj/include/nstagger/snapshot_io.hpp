#pragma once

// NSTG snapshot container, little-endian:
//   "NSTG" | u32 version = 1 | u32 ndim | u64 dim[ndim] | u8 dtype (0 = f64) | f64 payload
// Sequences are one snapshot per frame plus a text manifest with one
// "<path> <time>" line per frame. Paths in manifests are relative to the
// manifest's directory.

#include "nstagger/field.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace nstagger {

struct NdArray {
    std::vector<std::uint64_t> dims;
    std::vector<double> data;
};

std::vector<std::uint8_t> encode_snapshot(const NdArray& array);
NdArray decode_snapshot(const std::vector<std::uint8_t>& bytes);

void save_array(const NdArray& array, const std::filesystem::path& path);
NdArray load_array(const std::filesystem::path& path);

void save_field(const Field& field, const std::filesystem::path& path);
/// The container stores only shape and values. Spacing, boundary and time
/// come from `grid`/`time` when supplied; otherwise dx = 1/W on a periodic grid.
Field load_field(const std::filesystem::path& path, std::optional<GridSpec> grid = std::nullopt,
                 double time = 0.0);

/// Writes `<dir>/<stem>_NNNN.nstg` per frame and `<dir>/<stem>.manifest`.
std::filesystem::path save_sequence(const FieldSequence& seq, const std::filesystem::path& dir,
                                    const std::string& stem);
FieldSequence load_sequence(const std::filesystem::path& manifest,
                            std::optional<GridSpec> grid = std::nullopt);

/// FNV-1a over the raw bytes of a file; used for byte-identity audits.
std::uint64_t file_digest(const std::filesystem::path& path);
std::uint64_t bytes_digest(const std::vector<std::uint8_t>& bytes);

} // namespace nstagger
