#include "mft/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "mft/error.hpp"
#include "mft/ops.hpp"

namespace mft::model {

std::string_view to_string(Projection p) {
    switch (p) {
    case Projection::Q: return "q";
    case Projection::K: return "k";
    case Projection::V: return "v";
    case Projection::O: return "o";
    case Projection::Gate: return "gate";
    case Projection::Up: return "up";
    case Projection::Down: return "down";
    case Projection::Projector: return "projector";
    }
    return "?";
}

Projection parse_projection(std::string_view text) {
    for (auto p : kAllProjections) {
        if (to_string(p) == text) return p;
    }
    throw ConfigError("unknown projection '" + std::string(text) + "' (expected q,k,v,o,gate,up,down,projector)");
}

bool is_attention(Projection p) {
    return p == Projection::Q || p == Projection::K || p == Projection::V || p == Projection::O;
}

bool is_mlp(Projection p) {
    return p == Projection::Gate || p == Projection::Up || p == Projection::Down;
}

void ModelConfig::validate() const {
    auto positive = [](std::size_t v, const char* field) {
        if (v == 0) throw ConfigError(std::string("model.") + field + " must be positive");
    };
    positive(vocab_size, "vocab_size");
    positive(embed_dim, "embed_dim");
    // Zero layers is allowed: the embedding-only ablation.
    positive(num_heads, "num_heads");
    positive(mlp_hidden_dim, "mlp_hidden_dim");
    positive(context_length, "context_length");
    positive(vision_feature_dim, "vision_feature_dim");
    positive(vision_stub_dim, "vision_stub_dim");
    if (embed_dim % num_heads != 0) {
        throw ConfigError("model.embed_dim (" + std::to_string(embed_dim) + ") is not divisible by model.num_heads (" +
                          std::to_string(num_heads) + ")");
    }
    if (context_length < 2) throw ConfigError("model.context_length must be at least 2");
}

namespace {

PlacementPolicy make_policy(std::vector<Projection> targets, std::size_t num_layers) {
    if (num_layers == 0) throw ConfigError("placement needs at least one layer");
    return PlacementPolicy{std::move(targets), 0, num_layers - 1};
}

} // namespace

PlacementPolicy PlacementPolicy::attention(std::size_t num_layers) {
    return make_policy({Projection::Q, Projection::K, Projection::V, Projection::O}, num_layers);
}

PlacementPolicy PlacementPolicy::mlp(std::size_t num_layers) {
    return make_policy({Projection::Gate, Projection::Up, Projection::Down}, num_layers);
}

PlacementPolicy PlacementPolicy::both(std::size_t num_layers) {
    return make_policy({Projection::Q, Projection::K, Projection::V, Projection::O, Projection::Gate, Projection::Up,
                        Projection::Down},
                       num_layers);
}

void PlacementPolicy::validate(const ModelConfig& config) const {
    if (layer_lo > layer_hi) {
        throw ConfigError("placement layer range " + std::to_string(layer_lo) + "-" + std::to_string(layer_hi) +
                          " is reversed");
    }
    if (layer_hi >= config.num_layers) {
        throw ConfigError("placement layer " + std::to_string(layer_hi) + " is beyond the model's " +
                          std::to_string(config.num_layers) + " layers");
    }
    if (!config.gated_mlp && targets_kind(Projection::Gate)) {
        throw ConfigError("placement targets gate but the model has an ungated MLP");
    }
}

bool PlacementPolicy::targets_kind(Projection p) const {
    return std::find(targets.begin(), targets.end(), p) != targets.end();
}

bool PlacementPolicy::covers(Projection p, std::optional<std::size_t> layer) const {
    if (!targets_kind(p)) return false;
    if (!layer) return true;
    return *layer >= layer_lo && *layer <= layer_hi;
}

std::string PlacementPolicy::targets_string() const {
    std::string out;
    for (auto p : kAllProjections) {
        if (!targets_kind(p)) continue;
        if (!out.empty()) out += ",";
        out += to_string(p);
    }
    return out.empty() ? "none" : out;
}

std::vector<Projection> PlacementPolicy::parse_targets(std::string_view text) {
    std::vector<Projection> out;
    if (text == "none" || text.empty()) return out;
    auto add = [&](Projection p) {
        if (std::find(out.begin(), out.end(), p) == out.end()) out.push_back(p);
    };
    std::size_t start = 0;
    while (start <= text.size()) {
        const auto end = std::min(text.find(',', start), text.size());
        auto item = text.substr(start, end - start);
        while (!item.empty() && item.front() == ' ') item.remove_prefix(1);
        while (!item.empty() && item.back() == ' ') item.remove_suffix(1);
        if (item == "attn") {
            for (auto p : attention(1).targets) add(p);
        } else if (item == "mlp") {
            for (auto p : mlp(1).targets) add(p);
        } else if (item == "both") {
            for (auto p : both(1).targets) add(p);
        } else {
            add(parse_projection(item));
        }
        start = end + 1;
    }
    std::sort(out.begin(), out.end());
    return out;
}

namespace {

std::string layer_prefix(std::size_t i) {
    return "layers." + std::to_string(i) + ".";
}

struct Skeleton {
    std::vector<LinearSlot> slots;
    std::map<std::string, Shape> shapes;
};

Skeleton skeleton(const ModelConfig& c) {
    Skeleton s;
    const std::size_t d = c.embed_dim, h = c.mlp_hidden_dim;
    s.shapes["tok_emb"] = {c.vocab_size, d};
    s.shapes["pos_emb"] = {c.context_length, d};
    s.shapes["vision_stub"] = {c.vision_stub_dim, c.vision_feature_dim};
    s.shapes["projector.weight"] = {d, c.vision_stub_dim};
    s.shapes["projector.bias"] = {d};
    s.slots.push_back({"projector", Projection::Projector, std::nullopt, "projector.weight", "projector.bias"});
    for (std::size_t i = 0; i < c.num_layers; ++i) {
        const auto p = layer_prefix(i);
        s.shapes[p + "attn_norm"] = {d};
        s.shapes[p + "mlp_norm"] = {d};
        auto add_slot = [&](Projection kind, Shape shape) {
            const std::string name = p + std::string(to_string(kind));
            s.shapes[name + ".weight"] = std::move(shape);
            s.slots.push_back({name, kind, i, name + ".weight", std::nullopt});
        };
        add_slot(Projection::Q, {d, d});
        add_slot(Projection::K, {d, d});
        add_slot(Projection::V, {d, d});
        add_slot(Projection::O, {d, d});
        if (c.gated_mlp) add_slot(Projection::Gate, {h, d});
        add_slot(Projection::Up, {h, d});
        add_slot(Projection::Down, {d, h});
    }
    s.shapes["final_norm"] = {d};
    s.shapes["head"] = {c.vocab_size, d};
    return s;
}

} // namespace

bool is_adapter_name(std::string_view name) {
    return name.starts_with("scores/") || name.starts_with("lora_down/") || name.starts_with("lora_up/");
}

ToyVLM ToyVLM::build(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    ToyVLM m;
    m.config_ = config;
    auto sk = skeleton(config);
    m.slots_ = std::move(sk.slots);
    std::mt19937_64 rng(seed);
    const double out_scale = 1.0 / std::sqrt(2.0 * static_cast<double>(config.num_layers));
    // std::map iteration keeps the draw order independent of insertion order.
    for (const auto& [name, shape] : sk.shapes) {
        if (name.ends_with("_norm")) {
            m.tensors_[name] = Tensor::ones(shape);
        } else if (name == "projector.bias") {
            m.tensors_[name] = Tensor::zeros(shape);
        } else if (name == "tok_emb" || name == "pos_emb") {
            m.tensors_[name] = Tensor::randn(shape, rng, 0.1);
        } else {
            double stddev = 1.0 / std::sqrt(static_cast<double>(shape[1]));
            if (name.ends_with(".o.weight") || name.ends_with(".down.weight")) stddev *= out_scale;
            m.tensors_[name] = Tensor::randn(shape, rng, stddev);
        }
    }
    return m;
}

ToyVLM ToyVLM::from_tensors(const ModelConfig& config, std::map<std::string, Tensor> tensors) {
    config.validate();
    ToyVLM m;
    m.config_ = config;
    auto sk = skeleton(config);
    m.slots_ = std::move(sk.slots);
    for (const auto& [name, shape] : sk.shapes) {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw ConfigError("stored model is missing tensor '" + name + "'");
        if (it->second.shape() != shape) {
            throw ConfigError("stored tensor '" + name + "' has shape " + mft::to_string(it->second.shape()) +
                              ", config expects " + mft::to_string(shape));
        }
    }
    for (const auto& [name, t] : tensors) {
        if (!sk.shapes.contains(name) && !is_adapter_name(name)) {
            throw ConfigError("stored model has unexpected tensor '" + name + "'");
        }
    }
    m.tensors_ = std::move(tensors);
    return m;
}

const LinearSlot& ToyVLM::slot(std::string_view name) const {
    for (const auto& s : slots_) {
        if (s.name == name) return s;
    }
    throw ConfigError("no linear slot named '" + std::string(name) + "'");
}

Tensor& ToyVLM::tensor(const std::string& name) {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw ConfigError("no tensor named '" + name + "'");
    return it->second;
}

const Tensor& ToyVLM::tensor(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw ConfigError("no tensor named '" + name + "'");
    return it->second;
}

std::vector<std::string> ToyVLM::base_names() const {
    std::vector<std::string> out;
    for (const auto& [name, t] : tensors_)
        if (!is_adapter_name(name)) out.push_back(name);
    return out;
}

std::vector<std::string> ToyVLM::parameter_names() const {
    auto out = base_names();
    std::erase(out, std::string("vision_stub"));
    return out;
}

std::vector<std::string> ToyVLM::adapter_names() const {
    std::vector<std::string> out;
    for (const auto& [name, t] : tensors_)
        if (is_adapter_name(name)) out.push_back(name);
    return out;
}

void ToyVLM::apply_placement(const PlacementPolicy& policy, const masking::MaskSpec& spec, std::uint64_t seed) {
    if (adaptation_ != Adaptation::None) throw ConfigError("model already carries an adaptation; placement rejected");
    policy.validate(config_);
    spec.validate();
    std::mt19937_64 rng(seed);
    for (const auto& s : slots_) {
        if (!policy.covers(s.kind, s.layer)) continue;
        auto scores = masking::init_scores(tensor(s.weight).shape(), spec, rng, s.weight);
        tensors_["scores/" + s.name] = std::move(scores.values);
    }
    adaptation_ = Adaptation::Mask;
    placement_ = policy;
    mask_spec_ = spec;
}

void ToyVLM::apply_lora(const PlacementPolicy& policy, std::size_t rank, std::uint64_t seed) {
    if (adaptation_ != Adaptation::None) throw ConfigError("model already carries an adaptation; low-rank adapters rejected");
    policy.validate(config_);
    if (rank == 0) throw ConfigError("low-rank adapter rank must be at least 1");
    for (const auto& s : slots_) {
        if (!policy.covers(s.kind, s.layer)) continue;
        const auto& shape = tensor(s.weight).shape();
        if (rank >= std::min(shape[0], shape[1])) {
            throw ConfigError("low-rank adapter rank " + std::to_string(rank) + " is not below min" + mft::to_string(shape) +
                              " of " + s.name);
        }
    }
    std::mt19937_64 rng(seed);
    for (const auto& s : slots_) {
        if (!policy.covers(s.kind, s.layer)) continue;
        const auto& shape = tensor(s.weight).shape();
        tensors_["lora_down/" + s.name] =
            Tensor::randn({rank, shape[1]}, rng, 1.0 / std::sqrt(static_cast<double>(shape[1])));
        tensors_["lora_up/" + s.name] = Tensor::zeros({shape[0], rank});
    }
    adaptation_ = Adaptation::LowRank;
    placement_ = policy;
    lora_rank_ = rank;
}

void ToyVLM::restore_adaptation(Adaptation kind, std::optional<PlacementPolicy> policy,
                                std::optional<masking::MaskSpec> spec, std::size_t rank) {
    if (kind != Adaptation::None) {
        if (!policy) throw ConfigError("adapted model needs a placement policy");
        policy->validate(config_);
        for (const auto& s : slots_) {
            if (!policy->covers(s.kind, s.layer)) continue;
            const auto& shape = tensor(s.weight).shape();
            if (kind == Adaptation::Mask) {
                if (!spec) throw ConfigError("masked model needs a mask spec");
                if (tensor("scores/" + s.name).shape() != shape) throw ConfigError("scores of " + s.name + " do not match");
            } else {
                if (tensor("lora_down/" + s.name).shape() != Shape{rank, shape[1]} ||
                    tensor("lora_up/" + s.name).shape() != Shape{shape[0], rank}) {
                    throw ConfigError("low-rank factors of " + s.name + " do not match rank " + std::to_string(rank));
                }
            }
        }
    }
    adaptation_ = kind;
    placement_ = std::move(policy);
    mask_spec_ = kind == Adaptation::Mask ? spec : std::nullopt;
    lora_rank_ = kind == Adaptation::LowRank ? rank : 0;
}

void ToyVLM::set_mask_spec(const masking::MaskSpec& spec) {
    if (adaptation_ != Adaptation::Mask) throw ConfigError("model carries no masks");
    spec.validate();
    mask_spec_ = spec;
}

std::vector<std::string> ToyVLM::masked_slots() const {
    std::vector<std::string> out;
    if (adaptation_ != Adaptation::Mask) return out;
    for (const auto& s : slots_)
        if (tensors_.contains("scores/" + s.name)) out.push_back(s.name);
    return out;
}

Tensor ToyVLM::mask_of(const std::string& slot_name) const {
    if (adaptation_ != Adaptation::Mask) throw ConfigError("model carries no masks");
    return masking::compute_mask(tensor("scores/" + slot_name), *mask_spec_);
}

ad::Var ToyVLM::apply_linear(ad::Tape& tape, const LinearSlot& s, ad::Var x,
                             const std::map<std::string, ad::Var>& vars) const {
    const ad::Var w = vars.at(s.weight);
    std::optional<ad::Var> b;
    if (s.bias) b = vars.at(*s.bias);
    if (adaptation_ == Adaptation::Mask) {
        auto it = vars.find("scores/" + s.name);
        if (it != vars.end()) return masking::masked_linear(tape, x, w, it->second, *mask_spec_, b);
    } else if (adaptation_ == Adaptation::LowRank) {
        auto down = vars.find("lora_down/" + s.name);
        if (down != vars.end()) {
            const ad::Var delta = ad::matmul(tape, vars.at("lora_up/" + s.name), down->second);
            return ad::linear(tape, x, ad::add(tape, w, delta), b);
        }
    }
    return ad::linear(tape, x, w, b);
}

ForwardResult ToyVLM::forward(ad::Tape& tape, const Batch& batch, Trainable which) const {
    const auto& c = config_;
    if (batch.batch == 0 || batch.seq == 0) throw ShapeError("forward: empty batch");
    if (batch.tokens.size() != batch.batch * batch.seq) {
        throw ShapeError("forward: " + std::to_string(batch.tokens.size()) + " tokens for batch " +
                         std::to_string(batch.batch) + " x seq " + std::to_string(batch.seq));
    }
    const std::size_t prefix = batch.vision ? 1 : 0;
    const std::size_t total = batch.seq + prefix;
    if (total > c.context_length) {
        throw ShapeError("forward: sequence of " + std::to_string(total) + " positions exceeds context length " +
                         std::to_string(c.context_length));
    }
    if (batch.vision && batch.vision->shape() != Shape{batch.batch, c.vision_feature_dim}) {
        throw ShapeError("forward: vision features " + mft::to_string(batch.vision->shape()) + ", expected " +
                         mft::to_string(Shape{batch.batch, c.vision_feature_dim}));
    }

    ForwardResult result;
    std::map<std::string, ad::Var> vars;
    for (const auto& [name, t] : tensors_) {
        bool grad = false;
        switch (which) {
        case Trainable::Nothing: break;
        case Trainable::Base: grad = !is_adapter_name(name) && name != "vision_stub"; break;
        case Trainable::Scores: grad = name.starts_with("scores/"); break;
        case Trainable::LowRank: grad = name.starts_with("lora_"); break;
        }
        const ad::Var v = tape.leaf_ref(t, grad);
        vars.emplace(name, v);
        if (grad) result.trainable.emplace(name, v);
    }

    ad::Var x = ad::embedding(tape, vars.at("tok_emb"), batch.tokens);
    if (batch.vision) {
        const ad::Var feats = tape.constant(*batch.vision);
        const ad::Var stub = ad::linear(tape, feats, vars.at("vision_stub"));
        const ad::Var projected = apply_linear(tape, slot("projector"), stub, vars);
        const ad::Var stacked = ad::concat_rows(tape, projected, x);
        std::vector<std::size_t> order;
        order.reserve(batch.batch * total);
        for (std::size_t b = 0; b < batch.batch; ++b) {
            order.push_back(b);
            for (std::size_t t = 0; t < batch.seq; ++t) order.push_back(batch.batch + b * batch.seq + t);
        }
        x = ad::select_rows(tape, stacked, order);
    }
    std::vector<std::int32_t> positions(batch.batch * total);
    for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<std::int32_t>(i % total);
    x = ad::add(tape, x, ad::embedding(tape, vars.at("pos_emb"), positions));

    std::size_t si = 1; // slots_[0] is the projector
    for (std::size_t layer = 0; layer < c.num_layers; ++layer) {
        const auto p = layer_prefix(layer);
        const ad::Var h = ad::rms_norm(tape, x, vars.at(p + "attn_norm"));
        const ad::Var q = apply_linear(tape, slots_[si++], h, vars);
        const ad::Var k = apply_linear(tape, slots_[si++], h, vars);
        const ad::Var v = apply_linear(tape, slots_[si++], h, vars);
        const ad::Var att = ad::causal_attention(tape, q, k, v, batch.batch, total, c.num_heads);
        x = ad::add(tape, x, apply_linear(tape, slots_[si++], att, vars));

        const ad::Var h2 = ad::rms_norm(tape, x, vars.at(p + "mlp_norm"));
        ad::Var hidden;
        if (c.gated_mlp) {
            const ad::Var gate = ad::silu(tape, apply_linear(tape, slots_[si++], h2, vars));
            const ad::Var up = apply_linear(tape, slots_[si++], h2, vars);
            hidden = ad::mul(tape, gate, up);
        } else {
            hidden = ad::gelu(tape, apply_linear(tape, slots_[si++], h2, vars));
        }
        x = ad::add(tape, x, apply_linear(tape, slots_[si++], hidden, vars));
    }
    x = ad::rms_norm(tape, x, vars.at("final_norm"));
    if (batch.vision) {
        std::vector<std::size_t> keep;
        keep.reserve(batch.batch * batch.seq);
        for (std::size_t b = 0; b < batch.batch; ++b)
            for (std::size_t t = 0; t < batch.seq; ++t) keep.push_back(b * total + prefix + t);
        x = ad::select_rows(tape, x, keep);
    }
    result.logits = ad::linear(tape, x, vars.at("head"));
    return result;
}

Tensor ToyVLM::logits(const Batch& batch) const {
    ad::Tape tape;
    const auto r = forward(tape, batch, Trainable::Nothing);
    const auto& flat = tape.value(r.logits);
    return Tensor({batch.batch, batch.seq, config_.vocab_size}, flat.values());
}

TrainableCount count_trainable(const ToyVLM& model, bool full_finetune) {
    TrainableCount c;
    for (const auto& name : model.parameter_names()) c.total += model.tensor(name).size();
    if (full_finetune) {
        c.trainable = c.total;
    } else {
        for (const auto& name : model.adapter_names()) c.trainable += model.tensor(name).size();
    }
    c.ratio = c.total == 0 ? 0.0 : static_cast<double>(c.trainable) / static_cast<double>(c.total);
    return c;
}

} // namespace mft::model
