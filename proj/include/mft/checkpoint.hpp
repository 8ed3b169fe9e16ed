#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mft/model.hpp"

namespace mft {

/// One line of a training history. wall_seconds is reported in logs but
/// never serialized, so checkpoints of repeated runs hash identically.
struct Metrics {
    std::size_t step = 0;
    double train_loss = 0.0;
    /// NaN on steps without an evaluation.
    double eval_loss = 0.0;
    /// Fraction of soft-mask values below the near-zero threshold; 0 otherwise.
    double sparsity = 0.0;
    double wall_seconds = 0.0;
};

struct Checkpoint {
    model::ToyVLM model;
    /// "base", "smft", "smft_ste", "hmft", "fft" or "lora".
    std::string method = "base";
    std::vector<Metrics> history;
    /// Free-form provenance (corpus digests, seeds, sparsity source, ...).
    std::map<std::string, std::string> info;
};

inline constexpr std::uint16_t kCheckpointVersion = 1;

/// MFTC container:
///   "MFTC" | u16 version | u32 header length | header (UTF-8 key=value lines)
///   | u32 tensor count | per tensor: u16 name length, name, u8 dtype (1 = f64),
///     u8 rank, u64 extents[rank], u64 payload offset
///   | payloads (little-endian f64) | u64 checksum
/// The checksum is checksum64 over every preceding byte.
std::vector<std::byte> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(std::span<const std::byte> bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Trailing checksum of a serialized container, after validating it.
std::uint64_t stored_checksum(std::span<const std::byte> bytes);
std::uint64_t file_checksum(const std::filesystem::path& path);

std::vector<std::byte> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::byte> bytes);

/// "%.17g" with "nan"/"inf" spelled out; parse_double reads it back exactly.
std::string format_double(double v);
double parse_double(const std::string& text, const std::string& what);

} // namespace mft
