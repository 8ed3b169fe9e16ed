// Writes the deterministic synthetic corpora used by the toy experiments.
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "mft/corpus.hpp"
#include "mft/error.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Generate a synthetic text corpus"};
    std::string domain = "prose", out;
    std::size_t bytes = 100000;
    std::uint64_t seed = 1;
    app.add_option("--domain", domain, "prose or records");
    app.add_option("--bytes", bytes, "output size");
    app.add_option("--seed", seed, "generator seed");
    app.add_option("--out", out, "output file")->required();
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }
    try {
        const auto text = mft::data::synthesize_text(domain, bytes, seed);
        std::ofstream f(out, std::ios::binary | std::ios::trunc);
        if (!f) throw mft::IoError("cannot write '" + out + "'");
        f << text;
        if (!f) throw mft::IoError("failed writing '" + out + "'");
    } catch (const mft::ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const mft::IoError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    }
    return 0;
}
