#include <doctest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "mft/checkpoint.hpp"
#include "mft/corpus.hpp"
#include "mft/error.hpp"
#include "mft/hash.hpp"
#include "support/temp_dir.hpp"

using namespace mft;
using mft::testing::TempDir;

namespace {

std::span<const std::byte> as_bytes(std::string_view s) { return std::as_bytes(std::span(s.data(), s.size())); }

void write(const std::filesystem::path& p, const std::string& text) {
    std::ofstream f(p, std::ios::binary);
    f << text;
}

model::ModelConfig tiny() {
    model::ModelConfig c;
    c.vocab_size = 20;
    c.embed_dim = 8;
    c.num_layers = 2;
    c.num_heads = 2;
    c.mlp_hidden_dim = 12;
    c.context_length = 8;
    c.vision_feature_dim = 4;
    c.vision_stub_dim = 5;
    return c;
}

Checkpoint masked_checkpoint() {
    Checkpoint ck{model::ToyVLM::build(tiny(), 3), "base", {}, {}};
    ck.model.apply_placement(model::PlacementPolicy{{model::Projection::V, model::Projection::Projector}, 1, 1},
                             masking::MaskSpec::soft(3.0, 0.5), 4);
    ck.method = "smft";
    ck.history.push_back({0, 2.5, 2.25, 0.0, 1.0});
    ck.history.push_back({1, 2.0, std::numeric_limits<double>::quiet_NaN(), 0.125, 2.0});
    ck.info["seed"] = "7";
    ck.info["note"] = "two words";
    return ck;
}

} // namespace

TEST_CASE("sha256 reference vectors") {
    CHECK(to_hex(sha256(as_bytes("abc"))) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(to_hex(sha256(as_bytes(""))) == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(checksum64(as_bytes("abc")) == 0xeacf018fbf1678baULL);
    CHECK(tensor_digest(Tensor({2}, 1.0)) != tensor_digest(Tensor({1, 2}, 1.0)));
}

TEST_CASE("corpus windows drop the tail") {
    TempDir dir;
    write(dir / "a.txt", std::string(1000, 'x'));
    const auto c = data::ingest_corpus(dir / "a.txt", 256);
    CHECK(c.train.size() + c.held_out.size() == 3);
    for (const auto& w : c.train) CHECK(w.size() == 256);
}

TEST_CASE("corpus split and determinism") {
    TempDir dir;
    const auto text = data::synthesize_text("prose", 20000, 5);
    write(dir / "a.txt", text);
    write(dir / "b.txt", text);
    const auto a = data::ingest_corpus(dir / "a.txt", 64);
    const auto b = data::ingest_corpus(dir / "b.txt", 64);
    CHECK(a.train == b.train);
    CHECK(data::windows_digest(a.held_out) == data::windows_digest(b.held_out));
    const std::size_t n = 20000 / 64;
    CHECK(a.train.size() + a.held_out.size() == n);
    CHECK(a.held_out.size() == n / 10);
    // Held-out windows are every tenth chunk of the byte stream.
    for (std::size_t i = 0; i < a.held_out.size(); ++i) {
        const std::size_t chunk = 10 * i + 9;
        CHECK(a.held_out[i][0] == static_cast<unsigned char>(text[chunk * 64]));
    }
}

TEST_CASE("corpus errors") {
    TempDir dir;
    write(dir / "empty.txt", "");
    write(dir / "short.txt", "abc");
    CHECK_THROWS_AS(data::ingest_corpus(dir / "missing.txt", 8), IoError);
    CHECK_THROWS_AS(data::ingest_corpus(dir / "empty.txt", 8), IoError);
    CHECK_THROWS_AS(data::ingest_corpus(dir / "short.txt", 8), IoError);
    try {
        data::ingest_corpus(dir / "missing.txt", 8);
    } catch (const IoError& e) {
        CHECK(std::string(e.what()).find("missing.txt") != std::string::npos);
    }
}

TEST_CASE("data fraction keeps a deterministic prefix") {
    std::vector<std::uint8_t> bytes(100 * 16);
    for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = static_cast<std::uint8_t>(i * 31 % 251);
    const auto c = data::chunk_bytes(bytes, 16);
    CHECK(c.train.size() == 90);
    for (double f : {0.1, 0.25, 0.5, 1.0}) {
        const auto part = data::take_fraction(c, f);
        CHECK(part.train.size() == static_cast<std::size_t>(std::floor(f * 90)));
        CHECK(std::equal(part.train.begin(), part.train.end(), c.train.begin()));
        CHECK(part.held_out == c.held_out);
    }
    CHECK(data::take_fraction(c, 0.001).train.size() == 1);
    CHECK_THROWS_AS(data::take_fraction(c, 0.0), ConfigError);
    CHECK_THROWS_AS(data::take_fraction(c, 1.5), ConfigError);
}

TEST_CASE("synthetic domains differ and repeat") {
    const auto a = data::synthesize_text("prose", 4000, 1);
    const auto b = data::synthesize_text("records", 4000, 1);
    CHECK(a.size() == 4000);
    CHECK(b.size() == 4000);
    CHECK(a == data::synthesize_text("prose", 4000, 1));
    CHECK(a != data::synthesize_text("prose", 4000, 2));
    CHECK(b.find("id=") != std::string::npos);
    CHECK_THROWS_AS(data::synthesize_text("poetry", 10, 1), ConfigError);
}

TEST_CASE("checkpoint round trip") {
    TempDir dir;
    const auto ck = masked_checkpoint();
    save_checkpoint(ck, dir / "a.mftc");
    const auto back = load_checkpoint(dir / "a.mftc");
    CHECK(back.model.tensors() == ck.model.tensors());
    CHECK(back.model.config() == ck.model.config());
    CHECK(back.model.mask_spec() == ck.model.mask_spec());
    CHECK(back.model.placement() == ck.model.placement());
    CHECK(back.method == "smft");
    CHECK(back.info == ck.info);
    REQUIRE(back.history.size() == 2);
    CHECK(std::isnan(back.history[1].eval_loss));
    CHECK(back.history[1].sparsity == 0.125);
    CHECK(back.history[1].wall_seconds == 0.0);

    save_checkpoint(back, dir / "b.mftc");
    CHECK(read_file(dir / "a.mftc") == read_file(dir / "b.mftc"));

    model::Batch batch{1, 3, {1, 2, 3}, Tensor({1, 4}, 0.5)};
    CHECK(back.model.logits(batch) == ck.model.logits(batch));
}

TEST_CASE("checkpoint corruption is detected") {
    const auto bytes = serialize_checkpoint(masked_checkpoint());
    for (std::size_t pos : {std::size_t{10}, bytes.size() / 2, bytes.size() - 1}) {
        auto bad = bytes;
        bad[pos] ^= std::byte{0x01};
        CHECK_THROWS_AS(deserialize_checkpoint(bad), ChecksumError);
    }
    auto truncated = bytes;
    truncated.resize(bytes.size() - 9);
    CHECK_THROWS_AS(deserialize_checkpoint(truncated), IoError);
    CHECK_THROWS_AS(deserialize_checkpoint(std::span<const std::byte>(bytes.data(), 3)), IoError);
}

TEST_CASE("checkpoint version mismatch is explicit") {
    auto bytes = serialize_checkpoint(masked_checkpoint());
    bytes[4] = std::byte{2};
    const auto sum = checksum64(std::span<const std::byte>(bytes.data(), bytes.size() - 8));
    for (int i = 0; i < 8; ++i) bytes[bytes.size() - 8 + i] = static_cast<std::byte>((sum >> (8 * i)) & 0xFF);
    try {
        deserialize_checkpoint(bytes);
        FAIL("version 2 accepted");
    } catch (const ChecksumError&) {
        FAIL("version mismatch reported as a checksum error");
    } catch (const IoError& e) {
        CHECK(std::string(e.what()).find("version") != std::string::npos);
    }
}

TEST_CASE("number formatting round trips") {
    for (double v : {0.1, -1e-300, 3.0, 1.0 / 3.0}) CHECK(parse_double(format_double(v), "v") == v);
    CHECK(format_double(std::numeric_limits<double>::quiet_NaN()) == "nan");
    CHECK(std::isinf(parse_double(format_double(-std::numeric_limits<double>::infinity()), "v")));
    CHECK_THROWS_AS(parse_double("1.5x", "v"), ConfigError);
}
