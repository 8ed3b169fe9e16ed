#include "mft/analysis.hpp"

#include <cmath>
#include <sstream>

#include "mft/error.hpp"

namespace mft::analysis {

namespace {

void check_probability(double p) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("p must lie in [0, 1], got " + format_double(p));
}

std::string fixed(double v, int digits = 6) {
    std::ostringstream s;
    s.setf(std::ios::fixed);
    s.precision(digits);
    s << v;
    return s.str();
}

int sign(double v) { return (v > 0.0) - (v < 0.0); }

} // namespace

SparsityReport near_zero_report(const Checkpoint& ckpt, double epsilon) {
    const auto& m = ckpt.model;
    if (m.adaptation() != model::Adaptation::Mask) {
        throw ConfigError("near-zero report needs a masked checkpoint (got method " + ckpt.method + ")");
    }
    if (!(epsilon > 0.0)) throw ConfigError("epsilon must be positive");
    SparsityReport r;
    r.epsilon = epsilon;
    std::map<model::Projection, GroupFraction> by_kind;
    std::map<std::string, GroupFraction> by_layer;
    std::vector<std::string> layer_order;
    for (const auto& s : m.slots()) {
        if (!m.placement() || !m.placement()->covers(s.kind, s.layer)) continue;
        const auto mask = m.mask_of(s.name);
        std::size_t below = 0;
        for (double v : mask.data()) below += v < epsilon ? 1 : 0;
        const std::string layer = s.layer ? "layer." + std::to_string(*s.layer) : "projector";
        if (!by_layer.contains(layer)) layer_order.push_back(layer);
        for (auto* g : {&by_kind[s.kind], &by_layer[layer]}) {
            g->below += below;
            g->size += mask.size();
        }
        r.below += below;
        r.total += mask.size();
    }
    for (auto p : model::kAllProjections) {
        auto it = by_kind.find(p);
        if (it == by_kind.end()) continue;
        auto g = it->second;
        g.label = std::string(model::to_string(p));
        g.fraction = static_cast<double>(g.below) / static_cast<double>(g.size);
        r.per_projection.push_back(g);
    }
    for (const auto& name : layer_order) {
        auto g = by_layer[name];
        g.label = name;
        g.fraction = static_cast<double>(g.below) / static_cast<double>(g.size);
        r.per_layer.push_back(g);
    }
    r.global_p = r.total == 0 ? 0.0 : static_cast<double>(r.below) / static_cast<double>(r.total);
    return r;
}

double binary_entropy(double p) {
    check_probability(p);
    if (p == 0.0 || p == 1.0) return 0.0;
    return -p * std::log2(p) - (1.0 - p) * std::log2(1.0 - p);
}

double log2_binomial(double d, double z) {
    if (z < 0.0 || z > d) throw ConfigError("binomial needs 0 <= z <= d");
    return (std::lgamma(d + 1.0) - std::lgamma(z + 1.0) - std::lgamma(d - z + 1.0)) / std::log(2.0);
}

ComplexityDelta complexity_delta(double p, double b, double d) {
    check_probability(p);
    if (!(b > 0.0)) throw ConfigError("bit width b must be positive");
    if (!(d >= 1.0)) throw ConfigError("weight count d must be at least 1");
    ComplexityDelta c;
    c.p = p;
    c.b = b;
    c.d = d;
    c.entropy = binary_entropy(p);
    c.per_weight = c.entropy - b * p;
    c.total = d * c.per_weight;
    c.c_fft = b * d;
    c.c_smft = b * (1.0 - p) * d + d * c.entropy;
    if (d <= 1e6) {
        const double z = std::round(p * d);
        c.exact_total = log2_binomial(d, z) - b * z;
    }
    return c;
}

double breakeven_p(double b, double tolerance) {
    if (!(b > 2.0)) throw ConfigError("breakeven needs b > 2 for a root below 1/2");
    // H(p) − b·p is positive just above 0 and equals 1 − b/2 < 0 at 1/2.
    double lo = 1e-300, hi = 0.5;
    while (hi - lo > tolerance) {
        const double mid = 0.5 * (lo + hi);
        (binary_entropy(mid) - b * mid > 0.0 ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

double pac_phi(double u, double n, double delta) {
    if (!(n >= 2.0)) throw ConfigError("pac_phi needs n >= 2");
    if (!(u >= 0.0)) throw ConfigError("pac_phi needs u >= 0");
    if (!(delta > 0.0 && delta <= 1.0)) throw ConfigError("pac_phi needs 0 < delta <= 1");
    return std::sqrt((u + std::log(1.0 / delta)) / (2.0 * (n - 1.0)));
}

void BoundInputs::validate() const {
    if (n.has_value() != delta.has_value()) throw ConfigError("bound inputs n and delta must be given together");
    if (n && !(*n >= 2.0)) throw ConfigError("bound input n must be at least 2");
    if (delta && !(*delta > 0.0 && *delta < 1.0)) throw ConfigError("bound input delta must lie in (0, 1)");
    if (!(b > 0.0)) throw ConfigError("bound input b must be positive");
    if (!(d >= 1.0)) throw ConfigError("bound input d must be at least 1");
    if (!(z >= 0.0)) throw ConfigError("bound input z must be non-negative");
    if (z > d) throw ConfigError("bound input z (" + format_double(z) + ") exceeds d (" + format_double(d) + ")");
    if (!std::isfinite(train_loss_fft) || !std::isfinite(train_loss_mft)) {
        throw ConfigError("bound input losses must be finite");
    }
}

std::string_view to_string(Verdict v) {
    switch (v) {
    case Verdict::Negative: return "negative";
    case Verdict::Tie: return "tie";
    case Verdict::Positive: return "positive";
    }
    return "?";
}

BoundReport bound_comparison(const BoundInputs& in) {
    in.validate();
    BoundReport r;
    r.inputs = in;
    r.p = in.z / in.d;
    r.delta_train = in.train_loss_mft - in.train_loss_fft;
    const auto c = complexity_delta(r.p, in.b, in.d);
    r.H_p = c.entropy;
    r.per_weight_complexity = c.per_weight;
    r.delta_complexity = c.total;
    r.c_fft = c.c_fft;
    r.c_smft = c.c_smft;
    r.exact_delta_complexity = c.exact_total;
    r.linearized_sum = r.delta_train + r.delta_complexity;
    const int s = sign(r.linearized_sum);
    r.verdict = s < 0 ? Verdict::Negative : s > 0 ? Verdict::Positive : Verdict::Tie;
    if (in.n) {
        r.phi_fft = pac_phi(c.c_fft, *in.n, *in.delta);
        r.phi_mft = pac_phi(c.c_smft, *in.n, *in.delta);
        r.phi_sum = r.delta_train + (*r.phi_mft - *r.phi_fft);
        r.sign_disagreement = s != sign(*r.phi_sum);
    }
    return r;
}

std::vector<RatioRow> trainable_ratio_table(const model::ModelConfig& config, std::size_t lora_rank) {
    config.validate();
    const auto base = model::ToyVLM::build(config, 0);
    std::vector<RatioRow> rows;
    auto add = [&](std::string label, const model::TrainableCount& c) {
        rows.push_back({std::move(label), c.trainable, c.total, c.ratio});
    };
    add("fft", model::count_trainable(base, true));
    const masking::MaskSpec spec;
    const std::pair<const char*, model::PlacementPolicy> variants[] = {
        {"mft-attn", model::PlacementPolicy::attention(config.num_layers)},
        {"mft-mlp", model::PlacementPolicy::mlp(config.num_layers)},
        {"mft-both", model::PlacementPolicy::both(config.num_layers)},
    };
    for (auto policy : variants) {
        if (!config.gated_mlp) std::erase(policy.second.targets, model::Projection::Gate);
        auto m = base;
        m.apply_placement(policy.second, spec, 0);
        add(policy.first, model::count_trainable(m));
    }
    if (lora_rank > 0) {
        auto policy = model::PlacementPolicy::both(config.num_layers);
        if (!config.gated_mlp) std::erase(policy.targets, model::Projection::Gate);
        auto m = base;
        m.apply_lora(policy, lora_rank, 0);
        add("lora-both-r" + std::to_string(lora_rank), model::count_trainable(m));
    }
    return rows;
}

RatioRow checkpoint_ratio(const Checkpoint& ckpt) {
    const auto c = model::count_trainable(ckpt.model, ckpt.method == "fft");
    return {ckpt.method, c.trainable, c.total, c.ratio};
}

std::string format_sparsity_report(const SparsityReport& r) {
    std::ostringstream out;
    out << "near-zero mask proportions (mask < " << format_double(r.epsilon) << ")\n";
    out << "group\tkind\tfraction\tbelow\tsize\n";
    for (const auto& g : r.per_projection) {
        out << g.label << "\tprojection\t" << fixed(g.fraction) << '\t' << g.below << '\t' << g.size << '\n';
    }
    for (const auto& g : r.per_layer) {
        out << g.label << "\tlayer\t" << fixed(g.fraction) << '\t' << g.below << '\t' << g.size << '\n';
    }
    out << "global\tall\t" << fixed(r.global_p) << '\t' << r.below << '\t' << r.total << '\n';
    return out.str();
}

std::string sparsity_report_csv(const SparsityReport& r) {
    std::ostringstream out;
    out << "group,kind,fraction,below,size,epsilon\n";
    auto row = [&](const std::string& label, const char* kind, double f, std::size_t below, std::size_t size) {
        out << label << ',' << kind << ',' << format_double(f) << ',' << below << ',' << size << ','
            << format_double(r.epsilon) << '\n';
    };
    for (const auto& g : r.per_projection) row(g.label, "projection", g.fraction, g.below, g.size);
    for (const auto& g : r.per_layer) row(g.label, "layer", g.fraction, g.below, g.size);
    row("global", "all", r.global_p, r.below, r.total);
    return out.str();
}

std::string format_bound_report(const BoundReport& r) {
    std::ostringstream out;
    const auto& in = r.inputs;
    out << "inputs: n=" << (in.n ? format_double(*in.n) : "unset") << " delta="
        << (in.delta ? format_double(*in.delta) : "unset") << " b=" << format_double(in.b)
        << " d=" << format_double(in.d) << " z=" << format_double(in.z) << " p=" << format_double(r.p) << '\n';
    out << "delta_train\t" << fixed(r.delta_train) << "\t(loss_mft " << format_double(in.train_loss_mft)
        << " - loss_fft " << format_double(in.train_loss_fft) << ")\n";
    out << "H(p)\t" << fixed(r.H_p) << '\n';
    out << "per_weight_complexity\t" << fixed(r.per_weight_complexity) << "\t(H(p) - b*p)\n";
    out << "delta_complexity\t" << fixed(r.delta_complexity) << "\t(d * per-weight)\n";
    if (r.exact_delta_complexity) {
        out << "delta_complexity_exact\t" << fixed(*r.exact_delta_complexity) << "\t(log2 C(d,z) - b*z)\n";
    }
    out << "C_fft\t" << fixed(r.c_fft) << '\n';
    out << "C_smft\t" << fixed(r.c_smft) << '\n';
    out << "sum_linearized\t" << fixed(r.linearized_sum) << "\t(delta_train + delta_complexity)\n";
    if (r.phi_sum) {
        out << "phi_fft\t" << fixed(*r.phi_fft) << '\n';
        out << "phi_mft\t" << fixed(*r.phi_mft) << '\n';
        out << "sum_phi\t" << fixed(*r.phi_sum) << "\t(delta_train + phi_mft - phi_fft)\n";
    }
    out << "verdict\t" << to_string(r.verdict) << '\n';
    out << "note\tthe linearized sum treats the difference of phi terms as the difference of complexities";
    if (!r.phi_sum) {
        out << "; phi not evaluated (pass n and delta)\n";
    } else {
        out << (r.sign_disagreement ? "; the phi route DISAGREES in sign\n" : "; the phi route agrees in sign\n");
    }
    return out.str();
}

std::string format_ratio_table(const std::vector<RatioRow>& rows) {
    std::ostringstream out;
    out << "config\ttrainable\ttotal\tratio\n";
    for (const auto& r : rows) out << r.label << '\t' << r.trainable << '\t' << r.total << '\t' << fixed(r.ratio, 4) << '\n';
    return out.str();
}

std::string ratio_table_csv(const std::vector<RatioRow>& rows) {
    std::ostringstream out;
    out << "config,trainable,total,ratio\n";
    for (const auto& r : rows) out << r.label << ',' << r.trainable << ',' << r.total << ',' << format_double(r.ratio) << '\n';
    return out.str();
}

} // namespace mft::analysis
