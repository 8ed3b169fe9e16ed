#include "mft/corpus.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "mft/error.hpp"
#include "mft/hash.hpp"

namespace mft::data {

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open corpus file '" + path.string() + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("failed reading corpus file '" + path.string() + "'");
    if (bytes.empty()) throw IoError("corpus file '" + path.string() + "' is empty");
    return bytes;
}

Corpus chunk_bytes(std::span<const std::uint8_t> bytes, std::size_t window, std::string source) {
    if (window < 2) throw ConfigError("corpus window must hold at least 2 tokens");
    if (bytes.size() < window) {
        throw IoError("corpus '" + source + "' has " + std::to_string(bytes.size()) +
                      " bytes, fewer than one window of " + std::to_string(window));
    }
    Corpus c;
    c.source = std::move(source);
    c.window = window;
    const std::size_t n = bytes.size() / window;
    for (std::size_t i = 0; i < n; ++i) {
        Window w(bytes.begin() + static_cast<std::ptrdiff_t>(i * window),
                 bytes.begin() + static_cast<std::ptrdiff_t>((i + 1) * window));
        (i % 10 == 9 ? c.held_out : c.train).push_back(std::move(w));
    }
    return c;
}

Corpus ingest_corpus(const std::filesystem::path& path, std::size_t window) {
    const auto bytes = read_bytes(path);
    return chunk_bytes(bytes, window, path.string());
}

Corpus take_fraction(const Corpus& corpus, double fraction) {
    if (!(fraction > 0.0 && fraction <= 1.0)) {
        throw ConfigError("data fraction must lie in (0, 1], got " + std::to_string(fraction));
    }
    Corpus out = corpus;
    const auto keep = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::floor(fraction * static_cast<double>(corpus.train.size()) + 1e-9)));
    out.train.resize(std::min(keep, corpus.train.size()));
    return out;
}

std::string windows_digest(const std::vector<Window>& windows) {
    std::vector<std::byte> buf;
    for (const auto& w : windows) {
        const auto n = static_cast<std::uint64_t>(w.size());
        for (int i = 0; i < 8; ++i) buf.push_back(static_cast<std::byte>((n >> (8 * i)) & 0xFF));
        for (auto t : w) buf.push_back(static_cast<std::byte>(t & 0xFF));
    }
    return to_hex(sha256(buf));
}

namespace {

class Lexicon {
public:
    Lexicon(std::span<const char* const> onsets, std::span<const char* const> nuclei, std::size_t count,
            std::mt19937_64& rng) {
        std::uniform_int_distribution<std::size_t> syl(1, 3);
        std::uniform_int_distribution<std::size_t> on(0, onsets.size() - 1);
        std::uniform_int_distribution<std::size_t> nu(0, nuclei.size() - 1);
        while (words_.size() < count) {
            std::string w;
            const auto n = syl(rng);
            for (std::size_t i = 0; i < n; ++i) {
                w += onsets[on(rng)];
                w += nuclei[nu(rng)];
            }
            if (std::find(words_.begin(), words_.end(), w) == words_.end()) words_.push_back(std::move(w));
        }
        // Zipf-like weights give the lexicon a realistic frequency profile.
        std::vector<double> weights(words_.size());
        for (std::size_t i = 0; i < weights.size(); ++i) weights[i] = 1.0 / static_cast<double>(i + 1);
        pick_ = std::discrete_distribution<std::size_t>(weights.begin(), weights.end());
    }

    const std::string& draw(std::mt19937_64& rng) { return words_[pick_(rng)]; }

private:
    std::vector<std::string> words_;
    std::discrete_distribution<std::size_t> pick_;
};

constexpr std::array<const char*, 24> kProseOnsets{"b", "d",  "f", "g", "h",  "l", "m",  "n",  "p",  "r",  "s",  "t",
                                                   "th", "w", "k", "z", "v", "x", "qu", "j", "ch", "sk", "br", "gl"};
constexpr std::array<const char*, 10> kProseNuclei{"a", "e", "i", "o", "u", "ea", "ou", "ai", "y", "oo"};
constexpr std::array<const char*, 10> kRecordOnsets{"k", "z", "v", "x", "qu", "j", "ch", "sk", "br", "gl"};
constexpr std::array<const char*, 6> kRecordNuclei{"y", "oo", "ia", "ee", "u", "o"};

std::string prose(std::size_t bytes, std::mt19937_64& rng) {
    Lexicon nouns(kProseOnsets, kProseNuclei, 120, rng);
    Lexicon verbs(kProseOnsets, kProseNuclei, 60, rng);
    Lexicon adjectives(kProseOnsets, kProseNuclei, 40, rng);
    constexpr std::array<const char*, 6> determiners{"the", "a", "this", "every", "some", "that"};
    constexpr std::array<const char*, 5> links{"and", "but", "while", "so", "because"};
    std::uniform_int_distribution<std::size_t> det(0, determiners.size() - 1);
    std::uniform_int_distribution<std::size_t> link(0, links.size() - 1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::uniform_int_distribution<int> year(1100, 1999);

    std::string out;
    auto noun_phrase = [&] {
        std::string s = determiners[det(rng)];
        s += " ";
        if (u(rng) < 0.4) s += adjectives.draw(rng) + " ";
        s += nouns.draw(rng);
        return s;
    };
    std::size_t sentences = 0;
    while (out.size() < bytes) {
        std::string s = noun_phrase() + " " + verbs.draw(rng) + " " + noun_phrase();
        if (u(rng) < 0.3) s += ", " + std::string(links[link(rng)]) + " " + noun_phrase() + " " + verbs.draw(rng);
        if (u(rng) < 0.05) s += " in " + std::to_string(year(rng));
        s += ". ";
        out += s;
        if (++sentences % 6 == 0) out += "\n";
    }
    out.resize(bytes);
    return out;
}

std::string records(std::size_t bytes, std::mt19937_64& rng) {
    Lexicon sites(kRecordOnsets, kRecordNuclei, 40, rng);
    Lexicon units(kRecordOnsets, kRecordNuclei, 8, rng);
    std::uniform_int_distribution<int> id(0, 99999);
    std::uniform_int_distribution<int> whole(0, 99);
    std::uniform_int_distribution<int> frac(0, 9);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::string out;
    char buf[16];
    while (out.size() < bytes) {
        std::snprintf(buf, sizeof(buf), "%05d", id(rng));
        std::string line = "id=" + std::string(buf);
        line += " site=" + sites.draw(rng);
        line += " temp=" + std::to_string(whole(rng)) + "." + std::to_string(frac(rng));
        line += " unit=" + units.draw(rng);
        line += u(rng) < 0.8 ? " ok\n" : " fail\n";
        out += line;
    }
    out.resize(bytes);
    return out;
}

} // namespace

std::string synthesize_text(std::string_view domain, std::size_t bytes, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    if (domain == "prose") return prose(bytes, rng);
    if (domain == "records") return records(bytes, rng);
    throw ConfigError("unknown synthetic domain '" + std::string(domain) + "' (expected prose or records)");
}

} // namespace mft::data
