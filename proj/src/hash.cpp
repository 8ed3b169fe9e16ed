#include "mft/hash.hpp"

#include <bit>
#include <vector>

#include <openssl/evp.h>

#include "mft/error.hpp"

namespace mft {

Digest sha256(std::span<const std::byte> bytes) {
    Digest out{};
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), out.data(), &len, EVP_sha256(), nullptr) != 1 || len != out.size()) {
        throw Error("SHA-256 computation failed");
    }
    return out;
}

std::string to_hex(std::span<const std::uint8_t> bytes) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string s;
    s.reserve(bytes.size() * 2);
    for (auto b : bytes) {
        s.push_back(digits[b >> 4]);
        s.push_back(digits[b & 0xF]);
    }
    return s;
}

namespace {

void put_u64(std::vector<std::byte>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xFF));
}

} // namespace

std::string tensor_digest(const Tensor& t) {
    std::vector<std::byte> buf;
    buf.reserve(8 * (t.rank() + t.size() + 1));
    put_u64(buf, t.rank());
    for (auto e : t.shape()) put_u64(buf, e);
    for (double v : t.data()) put_u64(buf, std::bit_cast<std::uint64_t>(v));
    const auto d = sha256(buf);
    return to_hex(d);
}

std::uint64_t checksum64(std::span<const std::byte> bytes) {
    const auto d = sha256(bytes);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | d[static_cast<std::size_t>(i)];
    return v;
}

} // namespace mft
