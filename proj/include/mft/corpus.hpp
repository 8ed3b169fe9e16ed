#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mft::data {

using Window = std::vector<std::int32_t>;

/// Byte-level token windows of a text file, split 90/10 by chunk index:
/// every tenth window (index % 10 == 9) is held out.
struct Corpus {
    std::string source;
    std::size_t window = 0;
    std::vector<Window> train;
    std::vector<Window> held_out;
};

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);

/// Non-overlapping windows of `window` tokens; the tail that does not fill a
/// window is dropped. Rejects input shorter than one window.
Corpus chunk_bytes(std::span<const std::uint8_t> bytes, std::size_t window, std::string source = {});

/// read_bytes + chunk_bytes. Unreadable or empty files raise IoError.
Corpus ingest_corpus(const std::filesystem::path& path, std::size_t window);

/// Keeps the first ⌊fraction·N⌋ training windows (at least one); held-out
/// windows are untouched.
Corpus take_fraction(const Corpus& corpus, double fraction);

/// Hex SHA-256 over a window list, for split determinism checks.
std::string windows_digest(const std::vector<Window>& windows);

/// Deterministic synthetic text for the toy experiments. "prose" is
/// sentence-structured text over a pseudo-word lexicon; "records" is
/// line-oriented key=value data with a different lexicon and heavy digit use.
std::string synthesize_text(std::string_view domain, std::size_t bytes, std::uint64_t seed);

} // namespace mft::data
