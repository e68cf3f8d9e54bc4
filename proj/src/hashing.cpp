#include "cirsynth/hashing.hpp"

#include <openssl/sha.h>

#include <array>

namespace cirsynth {

namespace {
std::array<unsigned char, SHA256_DIGEST_LENGTH> digest(std::string_view bytes) {
    std::array<unsigned char, SHA256_DIGEST_LENGTH> out{};
    SHA256(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size(), out.data());
    return out;
}
}  // namespace

std::string sha256_hex(std::string_view bytes) {
    static constexpr char kHex[] = "0123456789abcdef";
    const auto d = digest(bytes);
    std::string out;
    out.reserve(d.size() * 2);
    for (unsigned char c : d) {
        out.push_back(kHex[c >> 4]);
        out.push_back(kHex[c & 0x0f]);
    }
    return out;
}

std::uint64_t hash64(std::string_view bytes) {
    const auto d = digest(bytes);
    std::uint64_t h = 0;
    for (int i = 0; i < 8; ++i) h = (h << 8) | d[i];
    return h;
}

std::uint64_t derive_seed(std::uint64_t master_seed, std::string_view stage) {
    return hash64(std::to_string(master_seed) + ":" + std::string(stage));
}

}  // namespace cirsynth
