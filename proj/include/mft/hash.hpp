#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>

#include "mft/tensor.hpp"

namespace mft {

using Digest = std::array<std::uint8_t, 32>;

Digest sha256(std::span<const std::byte> bytes);
std::string to_hex(std::span<const std::uint8_t> bytes);

/// SHA-256 of the tensor's shape and little-endian payload.
std::string tensor_digest(const Tensor& t);

/// First eight digest bytes read as a little-endian integer.
std::uint64_t checksum64(std::span<const std::byte> bytes);

} // namespace mft
