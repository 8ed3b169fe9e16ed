#include "mft/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <CLI11.hpp>

#include "mft/analysis.hpp"
#include "mft/checkpoint.hpp"
#include "mft/corpus.hpp"
#include "mft/error.hpp"
#include "mft/runspec.hpp"
#include "mft/training.hpp"

namespace mft::cli {

namespace fs = std::filesystem;

namespace {

struct Globals {
    std::string spec;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::size_t threads = 1;
};

std::string hex16(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot write '" + path.string() + "'");
    f << text;
    if (!f) throw IoError("failed writing '" + path.string() + "'");
}

RunSpec load_spec(const Globals& g, bool required, const std::map<std::string, std::string>& overrides = {}) {
    RunSpec spec;
    if (!g.spec.empty()) {
        spec = load_runspec(g.spec, overrides);
    } else if (required) {
        throw ConfigError("this command needs --spec <file>");
    }
    if (g.seed) apply_seed(spec, *g.seed);
    if (!g.out.empty()) spec.output_dir = g.out;
    return spec;
}

fs::path out_dir(const Globals& g) { return g.out.empty() ? fs::path("out") : fs::path(g.out); }

data::Corpus load_corpus(const std::optional<fs::path>& path, const char* key, std::size_t window) {
    if (!path) throw ConfigError(std::string("spec has no ") + key);
    return data::ingest_corpus(*path, window);
}

std::size_t checkpoint_window(const Checkpoint& ckpt) {
    auto it = ckpt.info.find("context_length");
    return it == ckpt.info.end() ? 64 : std::stoull(it->second);
}

bool checkpoint_vision(const Checkpoint& ckpt) {
    auto it = ckpt.info.find("use_vision");
    return it == ckpt.info.end() || it->second == "true";
}

void report_run(std::ostream& out, const fs::path& ckpt_path, const train::TrainResult& r) {
    out << "checkpoint\t" << ckpt_path.string() << '\n';
    out << "checksum\t" << hex16(file_checksum(ckpt_path)) << '\n';
    out << "best_step\t" << r.best_step << '\n';
    out << "best_eval_loss\t" << format_double(r.best_eval_loss) << '\n';
    out << "final_train_loss\t" << format_double(r.history.back().train_loss) << '\n';
}

int cmd_pretrain(const Globals& g, std::ostream& out) {
    auto spec = load_spec(g, true);
    const auto corpus = load_corpus(spec.corpus_a, "corpus.a", spec.pretrain.context_length);
    const auto r = train::pretrain_toy(spec.model, corpus, spec.pretrain);
    const auto dir = spec.output_dir;
    const auto path = dir / "base.mftc";
    save_checkpoint(r.checkpoint, path);
    write_text(dir / "metrics.tsv", train::format_metrics(r.history));
    write_text(dir / "resolved_spec.txt", echo_runspec(spec));
    std::ostringstream summary;
    report_run(summary, path, r);
    write_text(dir / "summary.txt", summary.str());
    out << summary.str();
    return kOk;
}

train::TrainConfig finetune_config(RunSpec& spec, std::map<std::string, std::string>& info, std::ostream& out) {
    if (!spec.finetune) throw ConfigError(spec.source + ": spec has no train.method");
    auto cfg = *spec.finetune;
    if (spec.sparsity_from) {
        if (cfg.method != train::Method::HMFT) throw ConfigError("--sparsity-from applies to method hmft only");
        const double k = read_sparsity_file(*spec.sparsity_from);
        cfg.mask_spec->sparsity_k = k;
        cfg.validate();
        spec.finetune = cfg;
        info["sparsity_from"] = spec.sparsity_from->string();
        out << "hmft sparsity k\t" << format_double(k) << "\t(from " << spec.sparsity_from->string() << ")\n";
    }
    if (cfg.mask_spec && cfg.mask_spec->kind == masking::MaskKind::Hard) {
        info["sparsity_k"] = format_double(cfg.mask_spec->sparsity_k);
    }
    return cfg;
}

int cmd_finetune(const Globals& g, const std::string& base_path, const std::string& sparsity_flag, bool inject_fault,
                 std::ostream& out) {
    std::map<std::string, std::string> overrides;
    if (!sparsity_flag.empty()) overrides["mask.sparsity_from"] = sparsity_flag;
    auto spec = load_spec(g, true, overrides);
    const auto base = load_checkpoint(base_path);
    if (const auto diff = config_differences(spec.model, base.model.config()); !diff.empty()) {
        throw ConfigError("base checkpoint does not match the spec: " + diff);
    }
    std::map<std::string, std::string> info;
    const auto cfg = finetune_config(spec, info, out);
    const auto corpus = load_corpus(spec.corpus_b, "corpus.b", cfg.context_length);
    train::StepHook hook;
    if (inject_fault) {
        hook = [](model::ToyVLM& m, std::size_t) { m.tensor("head")[0] += 1e-3; };
    }
    auto r = train::finetune(base, cfg, corpus, hook);
    for (auto& [k, v] : info) r.checkpoint.info[k] = v;
    r.checkpoint.info["base_checksum"] = hex16(file_checksum(base_path));
    const auto dir = spec.output_dir;
    const auto path = dir / (std::string(train::to_string(cfg.method)) + ".mftc");
    save_checkpoint(r.checkpoint, path);
    write_text(dir / "metrics.tsv", train::format_metrics(r.history));
    write_text(dir / "resolved_spec.txt", echo_runspec(spec));
    std::ostringstream summary;
    report_run(summary, path, r);
    write_text(dir / "summary.txt", summary.str());
    out << summary.str();
    return kOk;
}

int cmd_eval(const Globals& g, const std::string& ckpt_path, const std::string& corpus_path, std::size_t window,
             std::ostream& out) {
    const auto ckpt = load_checkpoint(ckpt_path);
    const auto w = window ? window : checkpoint_window(ckpt);
    const auto corpus = data::ingest_corpus(corpus_path, w);
    const auto r = train::evaluate(ckpt, corpus, checkpoint_vision(ckpt));
    std::ostringstream s;
    s << "checkpoint\t" << ckpt_path << '\n';
    s << "corpus\t" << corpus_path << '\n';
    s << "windows\t" << r.windows << '\n';
    s << "loss\t" << format_double(r.loss) << '\n';
    s << "perplexity\t" << format_double(r.perplexity) << '\n';
    write_text(out_dir(g) / "eval.txt", s.str());
    out << s.str();
    return kOk;
}

std::string layerwise_table(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw IoError("layerwise input '" + dir.string() + "' is not a directory");
    std::vector<fs::path> tables;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().filename() == "sweep.tsv") tables.push_back(e.path());
    }
    std::sort(tables.begin(), tables.end());
    if (tables.empty()) throw IoError("no sweep.tsv found under '" + dir.string() + "'");
    std::ostringstream o;
    o << "range\tstatus\tbest_eval_loss\tfinal_train_loss\tsparsity\tsource\n";
    std::size_t rows = 0;
    for (const auto& t : tables) {
        std::ifstream in(t);
        std::string line;
        std::getline(in, line); // header
        while (std::getline(in, line)) {
            std::vector<std::string> cols;
            std::stringstream ss(line);
            std::string c;
            while (std::getline(ss, c, '\t')) cols.push_back(c);
            if (cols.size() < 5 || cols[0].rfind("layers=", 0) != 0) continue;
            o << cols[0].substr(7) << '\t' << cols[1] << '\t' << cols[3] << '\t' << cols[2] << '\t' << cols[4] << '\t'
              << fs::relative(t, dir).string() << '\n';
            ++rows;
        }
    }
    if (rows == 0) throw ConfigError("no layer-range rows under '" + dir.string() + "'");
    return o.str();
}

int cmd_analyze(const Globals& g, const std::string& ckpt_path, std::optional<double> near_zero,
                std::optional<double> emergent, bool ratio, const std::string& layerwise, std::ostream& out) {
    const int chosen = near_zero.has_value() + emergent.has_value() + ratio + !layerwise.empty();
    if (chosen != 1) {
        throw ConfigError("analyze takes exactly one of --near-zero, --emergent-sparsity, --trainable-ratio, --layerwise");
    }
    const auto dir = out_dir(g);
    if (!layerwise.empty()) {
        const auto table = layerwise_table(layerwise);
        write_text(dir / "layerwise.tsv", table);
        out << table;
        return kOk;
    }
    if (ckpt_path.empty()) throw ConfigError("analyze needs --checkpoint");
    const auto ckpt = load_checkpoint(ckpt_path);
    if (near_zero) {
        const auto r = analysis::near_zero_report(ckpt, *near_zero);
        write_text(dir / "near_zero.txt", analysis::format_sparsity_report(r));
        write_text(dir / "near_zero.csv", analysis::sparsity_report_csv(r));
        out << analysis::format_sparsity_report(r);
    } else if (emergent) {
        const auto r = train::extract_emergent_sparsity(ckpt, *emergent);
        std::ostringstream s;
        s << "# emergent sparsity of " << ckpt_path << "\n";
        s << "epsilon = " << format_double(*emergent) << "\n";
        s << "p = " << format_double(r.p) << "\n";
        s << "below = " << r.below << "\n";
        s << "total = " << r.total << "\n";
        for (const auto& [slot, f] : r.per_slot) s << "slot." << slot << " = " << format_double(f) << "\n";
        write_text(dir / "emergent_sparsity.txt", s.str());
        out << s.str();
    } else {
        std::vector<analysis::RatioRow> rows{analysis::checkpoint_ratio(ckpt)};
        for (auto& r : analysis::trainable_ratio_table(ckpt.model.config())) rows.push_back(r);
        rows.front().label = "checkpoint:" + rows.front().label;
        write_text(dir / "trainable_ratio.txt", analysis::format_ratio_table(rows));
        write_text(dir / "trainable_ratio.csv", analysis::ratio_table_csv(rows));
        out << analysis::format_ratio_table(rows);
    }
    return kOk;
}

struct BoundFlags {
    std::optional<double> p, z, d, b, n, delta, loss_fft, loss_mft;
    std::string inputs;
};

analysis::BoundInputs bound_inputs(BoundFlags f) {
    if (!f.inputs.empty()) {
        std::ifstream in(f.inputs);
        if (!in) throw IoError("cannot open bound inputs '" + f.inputs + "'");
        std::string line;
        std::size_t no = 0;
        while (std::getline(in, line)) {
            ++no;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line.resize(hash);
            const auto eq = line.find('=');
            if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
            const auto where = f.inputs + ":" + std::to_string(no);
            if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
            std::string key = line.substr(0, eq), value = line.substr(eq + 1);
            key.erase(0, key.find_first_not_of(" \t"));
            key.erase(key.find_last_not_of(" \t\r") + 1);
            value.erase(0, value.find_first_not_of(" \t"));
            value.erase(value.find_last_not_of(" \t\r") + 1);
            const double v = parse_double(value, where + ": " + key);
            std::optional<double>* slot = key == "p"          ? &f.p
                                          : key == "z"        ? &f.z
                                          : key == "d"        ? &f.d
                                          : key == "b"        ? &f.b
                                          : key == "n"        ? &f.n
                                          : key == "delta"    ? &f.delta
                                          : key == "loss_fft" ? &f.loss_fft
                                          : key == "loss_mft" ? &f.loss_mft
                                                              : nullptr;
            if (!slot) throw ConfigError(where + ": unknown key '" + key + "'");
            if (!slot->has_value()) *slot = v; // flags win over the file
        }
    }
    analysis::BoundInputs in;
    in.d = f.d.value_or(1.0);
    in.b = f.b.value_or(8.0);
    if (f.p && f.z) throw ConfigError("give either p or z, not both");
    if (f.p) {
        if (!(*f.p >= 0.0 && *f.p <= 1.0)) throw ConfigError("p must lie in [0, 1]");
        in.z = *f.p * in.d;
    } else {
        in.z = f.z.value_or(0.0);
    }
    in.n = f.n;
    in.delta = f.delta;
    if (f.loss_fft.has_value() != f.loss_mft.has_value()) {
        throw ConfigError("give both --loss-fft and --loss-mft, or neither");
    }
    in.train_loss_fft = f.loss_fft.value_or(0.0);
    in.train_loss_mft = f.loss_mft.value_or(0.0);
    in.validate();
    return in;
}

int cmd_bound(const Globals& g, const BoundFlags& flags, std::ostream& out) {
    const auto report = analysis::bound_comparison(bound_inputs(flags));
    const auto text = analysis::format_bound_report(report);
    write_text(out_dir(g) / "bound.txt", text);
    out << text;
    return kOk;
}

std::string file_label(std::string label) {
    for (auto& c : label) {
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '.' && c != '-') c = '_';
    }
    return label;
}

int cmd_sweep(const Globals& g, const std::string& base_path, std::string axis, const std::string& values,
              const std::string& values2, std::optional<std::size_t> width, std::ostream& out) {
    auto spec = load_spec(g, true);
    if (!spec.finetune) throw ConfigError(spec.source + ": spec has no train.method");
    if (!axis.empty()) spec.sweep_axis = axis;
    if (!values.empty()) spec.sweep_values = parse_number_list(values, "--values");
    if (!values2.empty()) spec.sweep_values2 = parse_number_list(values2, "--values2");
    if (width) spec.sweep_width = *width;
    if (!spec.sweep_axis) throw ConfigError("sweep needs --axis or sweep.axis");
    const auto ax = train::parse_sweep_axis(*spec.sweep_axis);
    if (ax != train::SweepAxis::LayerRange && spec.sweep_values.empty()) throw ConfigError("sweep needs a value grid");

    const auto base = load_checkpoint(base_path);
    if (const auto diff = config_differences(spec.model, base.model.config()); !diff.empty()) {
        throw ConfigError("base checkpoint does not match the spec: " + diff);
    }
    std::map<std::string, std::string> info;
    const auto cfg = finetune_config(spec, info, out);
    const auto corpus = load_corpus(spec.corpus_b, "corpus.b", cfg.context_length);
    const auto cells = train::sweep_grid(ax, cfg, spec.sweep_values, spec.sweep_values2, spec.model.num_layers,
                                         spec.sweep_width);
    auto rows = train::sweep(base, cells, corpus, g.threads, true);
    const auto dir = spec.output_dir;
    for (auto& r : rows) {
        if (r.checkpoint) save_checkpoint(*r.checkpoint, dir / "cells" / (file_label(r.label) + ".mftc"));
    }
    const auto table = train::format_sweep_table(rows);
    write_text(dir / "sweep.tsv", table);
    write_text(dir / "resolved_spec.txt", echo_runspec(spec));
    out << table;
    return kOk;
}

} // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Mask fine-tuning of frozen toy transformers"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    std::uint64_t seed = 0;
    app.add_option("--spec", g.spec, "run spec file (key = value)");
    auto* seed_opt = app.add_option("--seed", seed, "override the spec's seed");
    app.add_option("--out", g.out, "output directory");
    app.add_option("--threads", g.threads, "worker threads for sweeps")->check(CLI::PositiveNumber);
    app.add_flag_callback(
        "--help-keys",
        [&out] {
            for (const auto& [key, what] : runspec_keys()) out << key << '\t' << what << '\n';
            throw CLI::Success();
        },
        "list every spec key and exit");

    auto* pretrain = app.add_subcommand("pretrain", "train the frozen base model on corpus.a");

    auto* finetune = app.add_subcommand("finetune", "adapt a base checkpoint on corpus.b");
    std::string base_path, sparsity_from;
    bool inject = false;
    finetune->add_option("--base", base_path, "base checkpoint")->required();
    finetune->add_option("--sparsity-from", sparsity_from, "emergent-sparsity report giving the hmft k");
    finetune->add_flag("--inject-frozen-fault", inject, "test hook: perturb a frozen tensor after each step")
        ->group("");

    auto* eval = app.add_subcommand("eval", "held-out loss and perplexity of a checkpoint");
    std::string ckpt_path, corpus_path;
    std::size_t window = 0;
    eval->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
    eval->add_option("--corpus", corpus_path, "text file")->required();
    eval->add_option("--window", window, "tokens per window (default: the checkpoint's training window)");

    auto* analyze = app.add_subcommand("analyze", "mask and parameter analyses");
    std::optional<double> near_zero, emergent;
    bool ratio = false;
    std::string layerwise;
    analyze->add_option("--checkpoint", ckpt_path, "checkpoint file");
    analyze->add_option("--near-zero", near_zero, "near-zero mask proportions below EPS");
    analyze->add_option("--emergent-sparsity", emergent, "fraction of soft-mask values below EPS");
    analyze->add_flag("--trainable-ratio", ratio, "trainable parameter ratio");
    analyze->add_option("--layerwise", layerwise, "aggregate layer-range sweep results under DIR");

    auto* bound = app.add_subcommand("bound", "PAC-Bayes complexity comparison");
    BoundFlags bf;
    bound->add_option("--p", bf.p, "suppressed fraction z/d");
    bound->add_option("--z", bf.z, "suppressed weight count");
    bound->add_option("--d", bf.d, "weights in the masked scope (default 1)");
    bound->add_option("--b", bf.b, "bits per weight (default 8)");
    bound->add_option("--n", bf.n, "training-set size (with --delta enables phi)");
    bound->add_option("--delta", bf.delta, "confidence (with --n enables phi)");
    bound->add_option("--loss-fft", bf.loss_fft, "FFT training loss");
    bound->add_option("--loss-mft", bf.loss_mft, "MFT training loss");
    bound->add_option("--inputs", bf.inputs, "key = value file with the same fields");

    auto* sweep = app.add_subcommand("sweep", "one fine-tuning run per grid cell");
    std::string axis, values, values2;
    std::optional<std::size_t> width;
    sweep->add_option("--base", base_path, "base checkpoint")->required();
    sweep->add_option("--axis", axis, "init-temperature, learning-rate, data-fraction or layer-range");
    sweep->add_option("--values", values, "comma list (inits, learning rates or fractions)");
    sweep->add_option("--values2", values2, "comma list of temperatures");
    sweep->add_option("--width", width, "layer-range width (0: all widths)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kUsage;
    }
    if (seed_opt->count()) g.seed = seed;

    try {
        if (pretrain->parsed()) return cmd_pretrain(g, out);
        if (finetune->parsed()) return cmd_finetune(g, base_path, sparsity_from, inject, out);
        if (eval->parsed()) return cmd_eval(g, ckpt_path, corpus_path, window, out);
        if (analyze->parsed()) return cmd_analyze(g, ckpt_path, near_zero, emergent, ratio, layerwise, out);
        if (bound->parsed()) return cmd_bound(g, bf, out);
        if (sweep->parsed()) return cmd_sweep(g, base_path, axis, values, values2, width, out);
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const IoError& e) {
        err << "error: " << e.what() << '\n';
        return kIo;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "error: " << e.what() << '\n';
        return kIo;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kRuntime;
    }
    return kUsage;
}

} // namespace mft::cli
