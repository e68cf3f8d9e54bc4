#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace cirsynth {

/// Lowercase hex SHA-256 of the input bytes.
[[nodiscard]] std::string sha256_hex(std::string_view bytes);

/// First 8 bytes of SHA-256, big-endian. Stable across platforms.
[[nodiscard]] std::uint64_t hash64(std::string_view bytes);

/// Per-stage seed: hash64("<master_seed>:<stage>").
[[nodiscard]] std::uint64_t derive_seed(std::uint64_t master_seed, std::string_view stage);

}  // namespace cirsynth
