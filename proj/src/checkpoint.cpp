#include "mft/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>

#include "mft/error.hpp"
#include "mft/hash.hpp"

namespace mft {

namespace {

constexpr char kMagic[4] = {'M', 'F', 'T', 'C'};
constexpr std::uint8_t kDtypeF64 = 1;

class Writer {
public:
    void bytes(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::byte*>(p);
        out_.insert(out_.end(), b, b + n);
    }
    template <class T>
    void uint(T v) {
        for (std::size_t i = 0; i < sizeof(T); ++i) out_.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xFF));
    }
    void f64(double v) { uint(std::bit_cast<std::uint64_t>(v)); }
    std::vector<std::byte>& buffer() { return out_; }

private:
    std::vector<std::byte> out_;
};

class Reader {
public:
    explicit Reader(std::span<const std::byte> in) : in_(in) {}

    std::span<const std::byte> take(std::size_t n) {
        if (n > in_.size() - pos_) throw IoError("checkpoint truncated at byte " + std::to_string(pos_));
        auto s = in_.subspan(pos_, n);
        pos_ += n;
        return s;
    }
    template <class T>
    T uint() {
        auto s = take(sizeof(T));
        T v = 0;
        for (std::size_t i = sizeof(T); i-- > 0;) v = static_cast<T>((v << 8) | std::to_integer<T>(s[i]));
        return v;
    }
    std::size_t pos() const { return pos_; }

private:
    std::span<const std::byte> in_;
    std::size_t pos_ = 0;
};

std::string method_key(std::size_t i) { return "metrics." + std::to_string(i); }

std::string build_header(const Checkpoint& ckpt) {
    const auto& m = ckpt.model;
    const auto& c = m.config();
    std::ostringstream h;
    h << "method=" << ckpt.method << "\n";
    h << "model.vocab_size=" << c.vocab_size << "\n";
    h << "model.embed_dim=" << c.embed_dim << "\n";
    h << "model.num_layers=" << c.num_layers << "\n";
    h << "model.num_heads=" << c.num_heads << "\n";
    h << "model.mlp_hidden_dim=" << c.mlp_hidden_dim << "\n";
    h << "model.context_length=" << c.context_length << "\n";
    h << "model.vision_feature_dim=" << c.vision_feature_dim << "\n";
    h << "model.vision_stub_dim=" << c.vision_stub_dim << "\n";
    h << "model.gated_mlp=" << (c.gated_mlp ? "true" : "false") << "\n";
    const char* kind = m.adaptation() == model::Adaptation::Mask      ? "mask"
                       : m.adaptation() == model::Adaptation::LowRank ? "lowrank"
                                                                      : "none";
    h << "adaptation=" << kind << "\n";
    if (const auto& p = m.placement()) {
        h << "placement.targets=" << p->targets_string() << "\n";
        h << "placement.layers=" << p->layer_lo << "-" << p->layer_hi << "\n";
    }
    if (const auto& s = m.mask_spec()) {
        h << "mask.kind=" << masking::to_string(s->kind) << "\n";
        h << "mask.sparsity_k=" << format_double(s->sparsity_k) << "\n";
        h << "mask.init_value=" << format_double(s->init_value) << "\n";
        h << "mask.temperature=" << format_double(s->temperature) << "\n";
        h << "mask.grad_mode=" << masking::to_string(s->grad_mode) << "\n";
    }
    if (m.adaptation() == model::Adaptation::LowRank) h << "lora.rank=" << m.lora_rank() << "\n";
    for (const auto& [k, v] : ckpt.info) {
        if (v.find('\n') != std::string::npos) throw ConfigError("checkpoint info '" + k + "' contains a newline");
        h << "info." << k << "=" << v << "\n";
    }
    h << "metrics.count=" << ckpt.history.size() << "\n";
    for (std::size_t i = 0; i < ckpt.history.size(); ++i) {
        const auto& r = ckpt.history[i];
        h << method_key(i) << "=" << r.step << " " << format_double(r.train_loss) << " "
          << format_double(r.eval_loss) << " " << format_double(r.sparsity) << "\n";
    }
    return h.str();
}

std::map<std::string, std::string> parse_header(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw IoError("malformed checkpoint header line '" + line + "'");
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return kv;
}

const std::string& need(const std::map<std::string, std::string>& kv, const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw IoError("checkpoint header lacks '" + key + "'");
    return it->second;
}

std::size_t need_size(const std::map<std::string, std::string>& kv, const std::string& key) {
    const auto& v = need(kv, key);
    char* end = nullptr;
    const auto n = std::strtoull(v.c_str(), &end, 10);
    if (v.empty() || *end != '\0') throw IoError("checkpoint header '" + key + "' is not an integer: " + v);
    return static_cast<std::size_t>(n);
}

Checkpoint rebuild(const std::map<std::string, std::string>& kv, std::map<std::string, Tensor> tensors) {
    model::ModelConfig c;
    c.vocab_size = need_size(kv, "model.vocab_size");
    c.embed_dim = need_size(kv, "model.embed_dim");
    c.num_layers = need_size(kv, "model.num_layers");
    c.num_heads = need_size(kv, "model.num_heads");
    c.mlp_hidden_dim = need_size(kv, "model.mlp_hidden_dim");
    c.context_length = need_size(kv, "model.context_length");
    c.vision_feature_dim = need_size(kv, "model.vision_feature_dim");
    c.vision_stub_dim = need_size(kv, "model.vision_stub_dim");
    c.gated_mlp = need(kv, "model.gated_mlp") == "true";

    Checkpoint ckpt{model::ToyVLM::from_tensors(c, std::move(tensors)), need(kv, "method"), {}, {}};

    const auto& kind = need(kv, "adaptation");
    if (kind != "none") {
        std::optional<model::PlacementPolicy> policy;
        if (kv.count("placement.targets")) {
            model::PlacementPolicy p;
            p.targets = model::PlacementPolicy::parse_targets(need(kv, "placement.targets"));
            const auto& range = need(kv, "placement.layers");
            const auto dash = range.find('-');
            if (dash == std::string::npos) throw IoError("malformed placement.layers '" + range + "'");
            p.layer_lo = std::stoull(range.substr(0, dash));
            p.layer_hi = std::stoull(range.substr(dash + 1));
            policy = p;
        }
        std::optional<masking::MaskSpec> spec;
        std::size_t rank = 0;
        model::Adaptation a = model::Adaptation::Mask;
        if (kind == "mask") {
            masking::MaskSpec s;
            s.kind = masking::parse_mask_kind(need(kv, "mask.kind"));
            s.sparsity_k = parse_double(need(kv, "mask.sparsity_k"), "mask.sparsity_k");
            s.init_value = parse_double(need(kv, "mask.init_value"), "mask.init_value");
            s.temperature = parse_double(need(kv, "mask.temperature"), "mask.temperature");
            s.grad_mode = masking::parse_grad_mode(need(kv, "mask.grad_mode"));
            spec = s;
        } else if (kind == "lowrank") {
            a = model::Adaptation::LowRank;
            rank = need_size(kv, "lora.rank");
        } else {
            throw IoError("unknown adaptation '" + kind + "' in checkpoint");
        }
        ckpt.model.restore_adaptation(a, policy, spec, rank);
    }

    for (const auto& [k, v] : kv) {
        if (k.rfind("info.", 0) == 0) ckpt.info[k.substr(5)] = v;
    }
    const auto n = need_size(kv, "metrics.count");
    ckpt.history.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::istringstream row(need(kv, method_key(i)));
        std::string step, train, eval, sparsity;
        row >> step >> train >> eval >> sparsity;
        Metrics r;
        r.step = std::stoull(step);
        r.train_loss = parse_double(train, method_key(i));
        r.eval_loss = parse_double(eval, method_key(i));
        r.sparsity = parse_double(sparsity, method_key(i));
        ckpt.history.push_back(r);
    }
    return ckpt;
}

} // namespace

std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

double parse_double(const std::string& text, const std::string& what) {
    char* end = nullptr;
    const double v = std::strtod(text.c_str(), &end);
    if (text.empty() || *end != '\0') throw ConfigError(what + ": '" + text + "' is not a number");
    return v;
}

std::vector<std::byte> serialize_checkpoint(const Checkpoint& ckpt) {
    Writer w;
    w.bytes(kMagic, 4);
    w.uint<std::uint16_t>(kCheckpointVersion);
    const auto header = build_header(ckpt);
    w.uint<std::uint32_t>(static_cast<std::uint32_t>(header.size()));
    w.bytes(header.data(), header.size());

    const auto& tensors = ckpt.model.tensors();
    w.uint<std::uint32_t>(static_cast<std::uint32_t>(tensors.size()));
    std::uint64_t offset = 0;
    for (const auto& [name, t] : tensors) {
        w.uint<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
        w.bytes(name.data(), name.size());
        w.uint<std::uint8_t>(kDtypeF64);
        w.uint<std::uint8_t>(static_cast<std::uint8_t>(t.rank()));
        for (auto e : t.shape()) w.uint<std::uint64_t>(e);
        w.uint<std::uint64_t>(offset);
        offset += 8 * t.size();
    }
    for (const auto& [name, t] : tensors) {
        for (double v : t.data()) w.f64(v);
    }
    const auto sum = checksum64(w.buffer());
    w.uint<std::uint64_t>(sum);
    return std::move(w.buffer());
}

std::uint64_t stored_checksum(std::span<const std::byte> bytes) {
    if (bytes.size() < 4 + 2 + 8 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw IoError("not an MFTC checkpoint (bad magic)");
    }
    Reader tail(bytes.subspan(bytes.size() - 8));
    const auto stored = tail.uint<std::uint64_t>();
    const auto actual = checksum64(bytes.first(bytes.size() - 8));
    if (stored != actual) throw ChecksumError("checkpoint checksum mismatch: file is corrupt");
    return stored;
}

Checkpoint deserialize_checkpoint(std::span<const std::byte> bytes) {
    stored_checksum(bytes);
    Reader r(bytes.first(bytes.size() - 8));
    r.take(4);
    const auto version = r.uint<std::uint16_t>();
    if (version != kCheckpointVersion) {
        throw IoError("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kCheckpointVersion) + ")");
    }
    const auto header_len = r.uint<std::uint32_t>();
    const auto hb = r.take(header_len);
    const std::string header(reinterpret_cast<const char*>(hb.data()), hb.size());

    struct Entry {
        std::string name;
        Shape shape;
        std::uint64_t offset;
    };
    std::vector<Entry> dir;
    const auto count = r.uint<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
        Entry e;
        const auto name_len = r.uint<std::uint16_t>();
        const auto nb = r.take(name_len);
        e.name.assign(reinterpret_cast<const char*>(nb.data()), nb.size());
        if (r.uint<std::uint8_t>() != kDtypeF64) throw IoError("tensor '" + e.name + "' has an unknown dtype");
        const auto rank = r.uint<std::uint8_t>();
        if (rank == 0) throw IoError("tensor '" + e.name + "' has rank 0");
        for (std::uint8_t d = 0; d < rank; ++d) e.shape.push_back(r.uint<std::uint64_t>());
        e.offset = r.uint<std::uint64_t>();
        dir.push_back(std::move(e));
    }
    const auto payload_start = r.pos();
    const auto payload = bytes.subspan(payload_start, bytes.size() - 8 - payload_start);
    std::map<std::string, Tensor> tensors;
    for (const auto& e : dir) {
        const auto n = element_count(e.shape);
        if (e.offset > payload.size() || 8 * n > payload.size() - e.offset) {
            throw IoError("tensor '" + e.name + "' payload lies outside the file");
        }
        Reader pr(payload.subspan(e.offset, 8 * n));
        std::vector<double> data(n);
        for (auto& v : data) v = std::bit_cast<double>(pr.uint<std::uint64_t>());
        tensors.emplace(e.name, Tensor(e.shape, std::move(data)));
    }
    return rebuild(parse_header(header), std::move(tensors));
}

std::vector<std::byte> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("failed reading '" + path.string() + "'");
    std::vector<std::byte> out(raw.size());
    std::memcpy(out.data(), raw.data(), raw.size());
    return out;
}

void write_file(const std::filesystem::path& path, std::span<const std::byte> bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing '" + path.string() + "'");
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    write_file(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    return deserialize_checkpoint(bytes);
}

std::uint64_t file_checksum(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    return stored_checksum(bytes);
}

} // namespace mft
