#include "mft/runspec.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "mft/error.hpp"

namespace mft::cli {

const std::vector<std::pair<std::string, std::string>>& runspec_keys() {
    static const std::vector<std::pair<std::string, std::string>> keys{
        {"seed", "master seed for weights, batches and adapters"},
        {"output.dir", "directory for checkpoints, logs and the resolved spec"},
        {"corpus.a", "pretraining text file"},
        {"corpus.b", "adaptation text file"},
        {"model.vocab_size", "token vocabulary (byte level: 256)"},
        {"model.embed_dim", "residual width"},
        {"model.num_layers", "transformer blocks"},
        {"model.num_heads", "attention heads (must divide embed_dim)"},
        {"model.mlp_hidden_dim", "MLP hidden width"},
        {"model.context_length", "maximum positions, vision prefix included"},
        {"model.vision_feature_dim", "raw synthetic vision feature width"},
        {"model.vision_stub_dim", "frozen vision stub output width"},
        {"model.gated_mlp", "true: gate/up/down MLP, false: up/down with GELU"},
        {"pretrain.learning_rate", "pretraining learning rate"},
        {"pretrain.steps", "pretraining updates"},
        {"pretrain.batch_size", "pretraining windows per update"},
        {"pretrain.context_length", "pretraining window length in tokens"},
        {"pretrain.optimizer", "sgd, momentum or adam"},
        {"pretrain.eval_interval", "steps between held-out evaluations"},
        {"pretrain.eval_windows", "held-out windows per evaluation (0: all)"},
        {"train.method", "smft, smft_ste, hmft, fft or lora"},
        {"train.learning_rate", "fine-tuning learning rate"},
        {"train.steps", "fine-tuning updates"},
        {"train.batch_size", "fine-tuning windows per update"},
        {"train.context_length", "fine-tuning window length in tokens"},
        {"train.optimizer", "sgd, momentum or adam"},
        {"train.data_fraction", "fraction of training windows used, in (0, 1]"},
        {"train.eval_interval", "steps between held-out evaluations"},
        {"train.eval_windows", "held-out windows per evaluation (0: all)"},
        {"train.epsilon", "near-zero threshold of the logged sparsity"},
        {"train.keep_best", "keep the best-evaluated parameters"},
        {"train.use_vision", "feed synthetic vision features through the projector"},
        {"train.lora_rank", "low-rank adapter rank (lora only)"},
        {"placement.targets", "comma list of q,k,v,o,gate,up,down,projector or attn/mlp/both"},
        {"placement.layers", "inclusive layer range lo-hi, or all"},
        {"mask.kind", "hard or soft"},
        {"mask.sparsity_k", "masked-out fraction of each hard-masked matrix"},
        {"mask.sparsity_from", "emergent-sparsity report whose p becomes mask.sparsity_k"},
        {"mask.init_value", "initial score (hard: offset of the 0.01-scaled noise)"},
        {"mask.temperature", "soft-mask temperature"},
        {"mask.grad_mode", "ste or sigmoid"},
        {"sweep.axis", "init-temperature, learning-rate, data-fraction or layer-range"},
        {"sweep.values", "comma list: inits, learning rates or fractions"},
        {"sweep.values2", "comma list of temperatures (init-temperature axis)"},
        {"sweep.width", "layer-range width (0: every width)"},
    };
    return keys;
}

namespace {

struct Entry {
    std::string value;
    std::size_t line = 0;
};

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

class Resolver {
public:
    Resolver(std::map<std::string, Entry> entries, std::string source)
        : entries_(std::move(entries)), source_(std::move(source)) {}

    bool has(const std::string& key) const { return entries_.contains(key); }

    [[noreturn]] void fail(const std::string& key, const std::string& message) const {
        auto it = entries_.find(key);
        std::string where = source_;
        if (it != entries_.end()) where += it->second.line == 0 ? " (command line)" : ":" + std::to_string(it->second.line);
        throw ConfigError(where + ": " + key + ": " + message);
    }

    std::string text(const std::string& key, const std::string& fallback) const {
        auto it = entries_.find(key);
        return it == entries_.end() ? fallback : it->second.value;
    }

    double number(const std::string& key, double fallback) const {
        if (!has(key)) return fallback;
        const auto& v = entries_.at(key).value;
        char* end = nullptr;
        const double d = std::strtod(v.c_str(), &end);
        if (v.empty() || *end != '\0') fail(key, "'" + v + "' is not a number");
        return d;
    }

    std::uint64_t integer(const std::string& key, std::uint64_t fallback) const {
        if (!has(key)) return fallback;
        const auto& v = entries_.at(key).value;
        char* end = nullptr;
        if (v.empty() || v[0] == '-') fail(key, "'" + v + "' is not a non-negative integer");
        const auto n = std::strtoull(v.c_str(), &end, 10);
        if (*end != '\0') fail(key, "'" + v + "' is not a non-negative integer");
        return n;
    }

    bool boolean(const std::string& key, bool fallback) const {
        if (!has(key)) return fallback;
        const auto& v = entries_.at(key).value;
        if (v == "true" || v == "1" || v == "yes") return true;
        if (v == "false" || v == "0" || v == "no") return false;
        fail(key, "'" + v + "' is not a boolean (true/false)");
    }

    template <class F>
    auto guarded(const std::string& key, F&& f) const {
        try {
            return f();
        } catch (const ConfigError& e) {
            fail(key, e.what());
        }
    }

    const std::string& source() const { return source_; }

private:
    std::map<std::string, Entry> entries_;
    std::string source_;
};

void parse_layers(const Resolver& r, model::PlacementPolicy& p, std::size_t num_layers) {
    const auto v = r.text("placement.layers", "all");
    if (v == "all") {
        if (num_layers == 0) r.fail("placement.layers", "model has no layers");
        p.layer_lo = 0;
        p.layer_hi = num_layers - 1;
        return;
    }
    const auto dash = v.find('-');
    try {
        if (dash == std::string::npos) {
            p.layer_lo = p.layer_hi = std::stoull(v);
        } else {
            p.layer_lo = std::stoull(v.substr(0, dash));
            p.layer_hi = std::stoull(v.substr(dash + 1));
        }
    } catch (const std::exception&) {
        r.fail("placement.layers", "'" + v + "' is not a range like 1-2 or all");
    }
}

train::TrainConfig resolve_finetune(const Resolver& r, const RunSpec& spec) {
    train::TrainConfig c;
    c.method = r.guarded("train.method", [&] { return train::parse_method(r.text("train.method", "")); });
    const bool masked = train::is_mask_method(c.method);
    c.seed = spec.seed;
    c.learning_rate = r.number("train.learning_rate", masked ? 0.1 : 1e-3);
    c.steps = r.integer("train.steps", 500);
    c.batch_size = r.integer("train.batch_size", 16);
    c.context_length = r.integer("train.context_length", 64);
    c.optimizer = r.guarded("train.optimizer", [&] { return train::parse_optimizer(r.text("train.optimizer", "adam")); });
    c.data_fraction = r.number("train.data_fraction", 1.0);
    c.eval_interval = r.integer("train.eval_interval", 100);
    c.eval_windows = r.integer("train.eval_windows", 0);
    c.epsilon = r.number("train.epsilon", 0.01);
    c.keep_best = r.boolean("train.keep_best", true);
    c.use_vision = r.boolean("train.use_vision", true);
    if (r.has("train.lora_rank")) c.lora_rank = r.integer("train.lora_rank", 0);

    if (r.has("placement.targets")) {
        model::PlacementPolicy p;
        p.targets = r.guarded("placement.targets",
                              [&] { return model::PlacementPolicy::parse_targets(r.text("placement.targets", "")); });
        parse_layers(r, p, spec.model.num_layers);
        r.guarded("placement.layers", [&] {
            p.validate(spec.model);
            return 0;
        });
        c.placement = p;
    } else if (r.has("placement.layers")) {
        r.fail("placement.layers", "given without placement.targets");
    }

    if (r.has("mask.kind")) {
        masking::MaskSpec m;
        m.kind = r.guarded("mask.kind", [&] { return masking::parse_mask_kind(r.text("mask.kind", "")); });
        const bool hard = m.kind == masking::MaskKind::Hard;
        m.sparsity_k = r.number("mask.sparsity_k", 0.0);
        m.init_value = r.number("mask.init_value", hard ? 0.0 : 7.0);
        m.temperature = r.number("mask.temperature", 2.3);
        const char* mode = c.method == train::Method::SMFT ? "sigmoid" : "ste";
        m.grad_mode = r.guarded("mask.grad_mode", [&] { return masking::parse_grad_mode(r.text("mask.grad_mode", mode)); });
        if (hard && !r.has("mask.sparsity_k") && !spec.sparsity_from) {
            r.fail("mask.kind", "hard masks need mask.sparsity_k or mask.sparsity_from");
        }
        c.mask_spec = m;
    } else {
        for (const char* k : {"mask.sparsity_k", "mask.init_value", "mask.temperature", "mask.grad_mode"}) {
            if (r.has(k)) r.fail(k, "given without mask.kind");
        }
    }
    r.guarded("train.method", [&] {
        c.validate();
        return 0;
    });
    return c;
}

} // namespace

RunSpec parse_runspec(std::string_view text, const std::string& source,
                      const std::map<std::string, std::string>& overrides) {
    const auto& known = runspec_keys();
    std::map<std::string, Entry> entries;
    std::istringstream in{std::string(text)};
    std::string raw;
    std::size_t line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        const auto hash = raw.find('#');
        const auto line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
        if (line.empty()) continue;
        const auto eq = line.find('=');
        const std::string where = source + ":" + std::to_string(line_no);
        if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value', got '" + line + "'");
        const auto key = trim(line.substr(0, eq));
        const auto value = trim(line.substr(eq + 1));
        const bool ok = std::any_of(known.begin(), known.end(), [&](const auto& k) { return k.first == key; });
        if (!ok) throw ConfigError(where + ": unknown key '" + key + "'");
        if (entries.contains(key)) {
            throw ConfigError(where + ": key '" + key + "' repeats line " + std::to_string(entries[key].line));
        }
        entries[key] = {value, line_no};
    }

    for (const auto& [key, value] : overrides) {
        const bool ok = std::any_of(known.begin(), known.end(), [&](const auto& k) { return k.first == key; });
        if (!ok) throw ConfigError("unknown spec key '" + key + "'");
        entries[key] = {value, 0};
    }

    const Resolver r(std::move(entries), source);
    RunSpec spec;
    spec.source = source;
    spec.seed = r.integer("seed", 0);
    spec.output_dir = r.text("output.dir", "out");
    if (r.has("corpus.a")) spec.corpus_a = r.text("corpus.a", "");
    if (r.has("corpus.b")) spec.corpus_b = r.text("corpus.b", "");
    if (r.has("mask.sparsity_from")) spec.sparsity_from = r.text("mask.sparsity_from", "");

    auto& m = spec.model;
    m.vocab_size = r.integer("model.vocab_size", m.vocab_size);
    m.embed_dim = r.integer("model.embed_dim", m.embed_dim);
    m.num_layers = r.integer("model.num_layers", m.num_layers);
    m.num_heads = r.integer("model.num_heads", m.num_heads);
    m.mlp_hidden_dim = r.integer("model.mlp_hidden_dim", m.mlp_hidden_dim);
    m.context_length = r.integer("model.context_length", m.context_length);
    m.vision_feature_dim = r.integer("model.vision_feature_dim", m.vision_feature_dim);
    m.vision_stub_dim = r.integer("model.vision_stub_dim", m.vision_stub_dim);
    m.gated_mlp = r.boolean("model.gated_mlp", m.gated_mlp);
    try {
        m.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(source + ": " + e.what());
    }

    auto& p = spec.pretrain;
    p.method = train::Method::FFT;
    p.seed = spec.seed;
    p.learning_rate = r.number("pretrain.learning_rate", 3e-3);
    p.steps = r.integer("pretrain.steps", 600);
    p.batch_size = r.integer("pretrain.batch_size", 16);
    p.context_length = r.integer("pretrain.context_length", 64);
    p.optimizer = r.guarded("pretrain.optimizer", [&] { return train::parse_optimizer(r.text("pretrain.optimizer", "adam")); });
    p.eval_interval = r.integer("pretrain.eval_interval", 100);
    p.eval_windows = r.integer("pretrain.eval_windows", 64);
    r.guarded("pretrain.learning_rate", [&] {
        p.validate();
        return 0;
    });

    if (r.has("train.method")) {
        spec.finetune = resolve_finetune(r, spec);
    } else {
        for (const char* k : {"placement.targets", "mask.kind", "train.lora_rank"}) {
            if (r.has(k)) r.fail(k, "given without train.method");
        }
    }

    if (r.has("sweep.axis")) {
        spec.sweep_axis = r.text("sweep.axis", "");
        r.guarded("sweep.axis", [&] { return train::parse_sweep_axis(*spec.sweep_axis); });
    }
    if (r.has("sweep.values")) {
        spec.sweep_values = r.guarded("sweep.values", [&] { return parse_number_list(r.text("sweep.values", ""), "sweep.values"); });
    }
    if (r.has("sweep.values2")) {
        spec.sweep_values2 =
            r.guarded("sweep.values2", [&] { return parse_number_list(r.text("sweep.values2", ""), "sweep.values2"); });
    }
    spec.sweep_width = r.integer("sweep.width", 0);
    return spec;
}

RunSpec load_runspec(const std::filesystem::path& path, const std::map<std::string, std::string>& overrides) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open spec file '" + path.string() + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_runspec(buf.str(), path.string(), overrides);
}

std::vector<double> parse_number_list(std::string_view text, const std::string& what) {
    std::vector<double> out;
    std::string s(text);
    std::stringstream in(s);
    std::string item;
    while (std::getline(in, item, ',')) {
        item = trim(item);
        char* end = nullptr;
        const double v = std::strtod(item.c_str(), &end);
        if (item.empty() || *end != '\0') throw ConfigError(what + ": '" + item + "' is not a number");
        out.push_back(v);
    }
    if (out.empty()) throw ConfigError(what + ": empty list");
    return out;
}

void apply_seed(RunSpec& spec, std::uint64_t seed) {
    spec.seed = seed;
    spec.pretrain.seed = seed;
    if (spec.finetune) spec.finetune->seed = seed;
}

namespace {

std::string join(const std::vector<double>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_double(v[i]);
    return s;
}

const char* boolean(bool b) { return b ? "true" : "false"; }

} // namespace

std::string echo_runspec(const RunSpec& spec) {
    std::ostringstream o;
    o << "# resolved run spec (defaults expanded)\n";
    o << "seed = " << spec.seed << "\n";
    o << "output.dir = " << spec.output_dir.string() << "\n";
    if (spec.corpus_a) o << "corpus.a = " << spec.corpus_a->string() << "\n";
    if (spec.corpus_b) o << "corpus.b = " << spec.corpus_b->string() << "\n";
    const auto& m = spec.model;
    o << "model.vocab_size = " << m.vocab_size << "\n";
    o << "model.embed_dim = " << m.embed_dim << "\n";
    o << "model.num_layers = " << m.num_layers << "\n";
    o << "model.num_heads = " << m.num_heads << "\n";
    o << "model.mlp_hidden_dim = " << m.mlp_hidden_dim << "\n";
    o << "model.context_length = " << m.context_length << "\n";
    o << "model.vision_feature_dim = " << m.vision_feature_dim << "\n";
    o << "model.vision_stub_dim = " << m.vision_stub_dim << "\n";
    o << "model.gated_mlp = " << boolean(m.gated_mlp) << "\n";
    const auto& p = spec.pretrain;
    o << "pretrain.learning_rate = " << format_double(p.learning_rate) << "\n";
    o << "pretrain.steps = " << p.steps << "\n";
    o << "pretrain.batch_size = " << p.batch_size << "\n";
    o << "pretrain.context_length = " << p.context_length << "\n";
    o << "pretrain.optimizer = " << train::to_string(p.optimizer) << "\n";
    o << "pretrain.eval_interval = " << p.eval_interval << "\n";
    o << "pretrain.eval_windows = " << p.eval_windows << "\n";
    if (const auto& f = spec.finetune) {
        o << "train.method = " << train::to_string(f->method) << "\n";
        o << "train.learning_rate = " << format_double(f->learning_rate) << "\n";
        o << "train.steps = " << f->steps << "\n";
        o << "train.batch_size = " << f->batch_size << "\n";
        o << "train.context_length = " << f->context_length << "\n";
        o << "train.optimizer = " << train::to_string(f->optimizer) << "\n";
        o << "train.data_fraction = " << format_double(f->data_fraction) << "\n";
        o << "train.eval_interval = " << f->eval_interval << "\n";
        o << "train.eval_windows = " << f->eval_windows << "\n";
        o << "train.epsilon = " << format_double(f->epsilon) << "\n";
        o << "train.keep_best = " << boolean(f->keep_best) << "\n";
        o << "train.use_vision = " << boolean(f->use_vision) << "\n";
        if (f->lora_rank) o << "train.lora_rank = " << *f->lora_rank << "\n";
        if (f->placement) {
            o << "placement.targets = " << f->placement->targets_string() << "\n";
            o << "placement.layers = " << f->placement->layer_lo << "-" << f->placement->layer_hi << "\n";
        }
        if (f->mask_spec) {
            const auto& s = *f->mask_spec;
            o << "mask.kind = " << masking::to_string(s.kind) << "\n";
            o << "mask.sparsity_k = " << format_double(s.sparsity_k) << "\n";
            o << "mask.init_value = " << format_double(s.init_value) << "\n";
            o << "mask.temperature = " << format_double(s.temperature) << "\n";
            o << "mask.grad_mode = " << masking::to_string(s.grad_mode) << "\n";
        }
    }
    if (spec.sparsity_from) o << "mask.sparsity_from = " << spec.sparsity_from->string() << "\n";
    if (spec.sweep_axis) o << "sweep.axis = " << *spec.sweep_axis << "\n";
    if (!spec.sweep_values.empty()) o << "sweep.values = " << join(spec.sweep_values) << "\n";
    if (!spec.sweep_values2.empty()) o << "sweep.values2 = " << join(spec.sweep_values2) << "\n";
    if (spec.sweep_width) o << "sweep.width = " << spec.sweep_width << "\n";
    return o.str();
}

std::string config_differences(const model::ModelConfig& a, const model::ModelConfig& b) {
    std::string out;
    auto cmp = [&](const char* name, auto x, auto y) {
        if (x != y) {
            if (!out.empty()) out += ", ";
            out += std::string(name) + " (spec " + std::to_string(x) + ", checkpoint " + std::to_string(y) + ")";
        }
    };
    cmp("model.vocab_size", a.vocab_size, b.vocab_size);
    cmp("model.embed_dim", a.embed_dim, b.embed_dim);
    cmp("model.num_layers", a.num_layers, b.num_layers);
    cmp("model.num_heads", a.num_heads, b.num_heads);
    cmp("model.mlp_hidden_dim", a.mlp_hidden_dim, b.mlp_hidden_dim);
    cmp("model.context_length", a.context_length, b.context_length);
    cmp("model.vision_feature_dim", a.vision_feature_dim, b.vision_feature_dim);
    cmp("model.vision_stub_dim", a.vision_stub_dim, b.vision_stub_dim);
    cmp("model.gated_mlp", static_cast<int>(a.gated_mlp), static_cast<int>(b.gated_mlp));
    return out;
}

double read_sparsity_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open sparsity file '" + path.string() + "'");
    std::string line;
    while (std::getline(in, line)) {
        const auto t = trim(line);
        if (t.rfind("p", 0) != 0) continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos || trim(t.substr(1, eq - 1)) != "") continue;
        return parse_double(trim(t.substr(eq + 1)), path.string() + ": p");
    }
    throw IoError("sparsity file '" + path.string() + "' has no 'p = <value>' line");
}

} // namespace mft::cli
