#include "mft/training.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "mft/error.hpp"
#include "mft/hash.hpp"
#include "mft/ops.hpp"

namespace mft::train {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

} // namespace

std::string_view to_string(Method m) {
    switch (m) {
    case Method::SMFT: return "smft";
    case Method::SMFT_STE: return "smft_ste";
    case Method::HMFT: return "hmft";
    case Method::FFT: return "fft";
    case Method::LoRA: return "lora";
    }
    return "?";
}

Method parse_method(std::string_view text) {
    for (auto m : {Method::SMFT, Method::SMFT_STE, Method::HMFT, Method::FFT, Method::LoRA}) {
        if (to_string(m) == text) return m;
    }
    throw ConfigError("unknown method '" + std::string(text) + "' (expected smft, smft_ste, hmft, fft or lora)");
}

std::string_view to_string(OptimizerKind k) {
    switch (k) {
    case OptimizerKind::SGD: return "sgd";
    case OptimizerKind::Momentum: return "momentum";
    case OptimizerKind::Adam: return "adam";
    }
    return "?";
}

OptimizerKind parse_optimizer(std::string_view text) {
    for (auto k : {OptimizerKind::SGD, OptimizerKind::Momentum, OptimizerKind::Adam}) {
        if (to_string(k) == text) return k;
    }
    throw ConfigError("unknown optimizer '" + std::string(text) + "' (expected sgd, momentum or adam)");
}

bool is_mask_method(Method m) { return m == Method::SMFT || m == Method::SMFT_STE || m == Method::HMFT; }

void TrainConfig::validate() const {
    const std::string name(to_string(method));
    if (is_mask_method(method)) {
        if (!mask_spec) throw ConfigError("method " + name + " requires a mask spec");
        if (!placement) throw ConfigError("method " + name + " requires a placement");
        if (lora_rank) throw ConfigError("method " + name + " does not take a lora rank");
        mask_spec->validate();
        const auto& s = *mask_spec;
        if (method == Method::HMFT && s.kind != masking::MaskKind::Hard) {
            throw ConfigError("method hmft needs mask.kind = hard");
        }
        if (method != Method::HMFT && s.kind != masking::MaskKind::Soft) {
            throw ConfigError("method " + name + " needs mask.kind = soft");
        }
        if (method == Method::SMFT && s.grad_mode != masking::GradMode::TrueSigmoid) {
            throw ConfigError("method smft needs mask.grad_mode = sigmoid");
        }
        if (method == Method::SMFT_STE && s.grad_mode != masking::GradMode::STE) {
            throw ConfigError("method smft_ste needs mask.grad_mode = ste");
        }
    } else if (method == Method::FFT) {
        if (mask_spec) throw ConfigError("method fft does not take a mask spec");
        if (placement) throw ConfigError("method fft does not take a placement");
        if (lora_rank) throw ConfigError("method fft does not take a lora rank");
    } else {
        if (mask_spec) throw ConfigError("method lora does not take a mask spec");
        if (!placement) throw ConfigError("method lora requires a placement for its adapters");
        if (!lora_rank || *lora_rank == 0) throw ConfigError("method lora requires lora_rank >= 1");
    }
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
        throw ConfigError("learning_rate must be positive, got " + format_double(learning_rate));
    }
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (context_length < 2) throw ConfigError("context_length must be at least 2");
    if (!(data_fraction > 0.0 && data_fraction <= 1.0)) {
        throw ConfigError("data_fraction must lie in (0, 1], got " + format_double(data_fraction));
    }
    if (eval_interval == 0) throw ConfigError("eval_interval must be positive");
    if (!(epsilon > 0.0 && epsilon < 1.0)) throw ConfigError("epsilon must lie in (0, 1)");
}

std::vector<double> vision_features(const data::Window& window, std::size_t dim) {
    std::vector<double> f(dim, 0.0);
    for (auto t : window) f[static_cast<std::size_t>(t) % dim] += 1.0;
    double mean = 0.0;
    for (double v : f) mean += v;
    mean /= static_cast<double>(dim);
    double var = 0.0;
    for (double& v : f) {
        v -= mean;
        var += v * v;
    }
    const double sd = std::sqrt(var / static_cast<double>(dim));
    if (sd > 0.0) {
        for (double& v : f) v /= sd;
    }
    return f;
}

model::Batch make_batch(const std::vector<const data::Window*>& windows, std::size_t vision_dim, bool use_vision) {
    model::Batch b;
    b.batch = windows.size();
    b.seq = windows.front()->size() - 1;
    b.tokens.reserve(b.batch * b.seq);
    for (const auto* w : windows) {
        if (w->size() != b.seq + 1) throw ShapeError("batch windows differ in length");
        b.tokens.insert(b.tokens.end(), w->begin(), w->end() - 1);
    }
    if (use_vision) {
        std::vector<double> feats;
        feats.reserve(b.batch * vision_dim);
        for (const auto* w : windows) {
            const auto f = vision_features(*w, vision_dim);
            feats.insert(feats.end(), f.begin(), f.end());
        }
        b.vision = Tensor(Shape{b.batch, vision_dim}, std::move(feats));
    }
    return b;
}

std::vector<std::int32_t> batch_targets(const std::vector<const data::Window*>& windows) {
    std::vector<std::int32_t> t;
    for (const auto* w : windows) t.insert(t.end(), w->begin() + 1, w->end());
    return t;
}

EvalResult evaluate(const model::ToyVLM& model, const std::vector<data::Window>& windows, bool use_vision,
                    std::size_t chunk) {
    if (windows.empty()) throw ConfigError("evaluation needs at least one window");
    double total = 0.0;
    ad::Tape tape;
    for (std::size_t start = 0; start < windows.size(); start += chunk) {
        std::vector<const data::Window*> part;
        for (std::size_t i = start; i < std::min(windows.size(), start + chunk); ++i) part.push_back(&windows[i]);
        tape.reset();
        const auto batch = make_batch(part, model.config().vision_feature_dim, use_vision);
        const auto fr = model.forward(tape, batch, model::Trainable::Nothing);
        const auto loss = ad::softmax_cross_entropy(tape, fr.logits, batch_targets(part));
        total += tape.value(loss).item() * static_cast<double>(part.size());
    }
    EvalResult r;
    r.windows = windows.size();
    r.loss = total / static_cast<double>(windows.size());
    r.perplexity = std::exp(r.loss);
    return r;
}

EvalResult evaluate(const Checkpoint& ckpt, const data::Corpus& corpus, bool use_vision) {
    if (corpus.held_out.empty()) {
        throw ConfigError("corpus '" + corpus.source + "' has no held-out windows (needs at least 10 windows)");
    }
    return evaluate(ckpt.model, corpus.held_out, use_vision);
}

double mask_sparsity(const model::ToyVLM& model, double epsilon) {
    std::size_t below = 0, total = 0;
    for (const auto& name : model.masked_slots()) {
        const auto m = model.mask_of(name);
        for (double v : m.data()) below += v < epsilon ? 1 : 0;
        total += m.size();
    }
    return total == 0 ? 0.0 : static_cast<double>(below) / static_cast<double>(total);
}

SparsityBreakdown extract_emergent_sparsity(const Checkpoint& soft, double epsilon) {
    const auto& spec = soft.model.mask_spec();
    if (soft.model.adaptation() != model::Adaptation::Mask || !spec || spec->kind != masking::MaskKind::Soft) {
        throw ConfigError("emergent sparsity needs a soft-mask checkpoint");
    }
    SparsityBreakdown out;
    for (const auto& name : soft.model.masked_slots()) {
        const auto m = soft.model.mask_of(name);
        std::size_t below = 0;
        for (double v : m.data()) below += v < epsilon ? 1 : 0;
        out.per_slot[name] = static_cast<double>(below) / static_cast<double>(m.size());
        out.below += below;
        out.total += m.size();
    }
    out.p = out.total == 0 ? 0.0 : static_cast<double>(out.below) / static_cast<double>(out.total);
    return out;
}

std::map<std::string, std::string> frozen_hashes(const model::ToyVLM& model, Method method) {
    std::map<std::string, std::string> out;
    for (const auto& [name, t] : model.tensors()) {
        bool trainable = false;
        switch (method) {
        case Method::SMFT:
        case Method::SMFT_STE:
        case Method::HMFT: trainable = name.starts_with("scores/"); break;
        case Method::LoRA: trainable = name.starts_with("lora_"); break;
        case Method::FFT: trainable = !model::is_adapter_name(name) && name != "vision_stub"; break;
        }
        if (!trainable) out.emplace(name, tensor_digest(t));
    }
    return out;
}

void tune_allocator() {
#ifdef __GLIBC__
    static std::once_flag once;
    std::call_once(once, [] {
        mallopt(M_MMAP_THRESHOLD, 256 * 1024 * 1024);
        mallopt(M_TRIM_THRESHOLD, 512 * 1024 * 1024);
        mallopt(M_TOP_PAD, 64 * 1024 * 1024);
    });
#endif
}

namespace {

class Optimizer {
public:
    Optimizer(OptimizerKind kind, double lr) : kind_(kind), lr_(lr) {}

    /// Applies one update; returns the largest absolute parameter change.
    double step(model::ToyVLM& model, const std::map<std::string, Tensor>& grads) {
        ++t_;
        double max_delta = 0.0;
        const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
        for (const auto& [name, g] : grads) {
            auto p = model.tensor(name).data();
            const auto gd = g.data();
            switch (kind_) {
            case OptimizerKind::SGD:
                for (std::size_t i = 0; i < p.size(); ++i) {
                    const double d = lr_ * gd[i];
                    p[i] -= d;
                    max_delta = std::max(max_delta, std::abs(d));
                }
                break;
            case OptimizerKind::Momentum: {
                auto v = state(m_, name, g.shape()).data();
                for (std::size_t i = 0; i < p.size(); ++i) {
                    v[i] = kMomentum * v[i] + gd[i];
                    const double d = lr_ * v[i];
                    p[i] -= d;
                    max_delta = std::max(max_delta, std::abs(d));
                }
                break;
            }
            case OptimizerKind::Adam: {
                auto m = state(m_, name, g.shape()).data();
                auto v = state(v_, name, g.shape()).data();
                for (std::size_t i = 0; i < p.size(); ++i) {
                    m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * gd[i];
                    v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * gd[i] * gd[i];
                    const double d = lr_ * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + kEps);
                    p[i] -= d;
                    max_delta = std::max(max_delta, std::abs(d));
                }
                break;
            }
            }
        }
        return max_delta;
    }

private:
    static constexpr double kMomentum = 0.9;
    static constexpr double kBeta1 = 0.9;
    static constexpr double kBeta2 = 0.999;
    static constexpr double kEps = 1e-8;

    static Tensor& state(std::map<std::string, Tensor>& store, const std::string& name, const Shape& shape) {
        auto it = store.find(name);
        if (it == store.end()) it = store.emplace(name, Tensor::zeros(shape)).first;
        return it->second;
    }

    OptimizerKind kind_;
    double lr_;
    std::size_t t_ = 0;
    std::map<std::string, Tensor> m_;
    std::map<std::string, Tensor> v_;
};

model::Trainable trainable_for(Method m) {
    switch (m) {
    case Method::SMFT:
    case Method::SMFT_STE:
    case Method::HMFT: return model::Trainable::Scores;
    case Method::FFT: return model::Trainable::Base;
    case Method::LoRA: return model::Trainable::LowRank;
    }
    return model::Trainable::Nothing;
}

std::vector<data::Window> eval_set(const data::Corpus& corpus, std::size_t limit) {
    if (corpus.held_out.empty()) {
        throw ConfigError("corpus '" + corpus.source + "' has no held-out windows (needs at least 10 windows)");
    }
    if (limit == 0 || limit >= corpus.held_out.size()) return corpus.held_out;
    return {corpus.held_out.begin(), corpus.held_out.begin() + static_cast<std::ptrdiff_t>(limit)};
}

TrainResult run(model::ToyVLM model, const TrainConfig& cfg, const data::Corpus& corpus_in, std::string method_name,
                const StepHook& hook) {
    tune_allocator();
    if (corpus_in.train.empty()) throw ConfigError("corpus '" + corpus_in.source + "' has no training windows");
    if (corpus_in.window != cfg.context_length) {
        throw ConfigError("corpus windows hold " + std::to_string(corpus_in.window) + " tokens but context_length is " +
                          std::to_string(cfg.context_length));
    }
    const auto corpus = data::take_fraction(corpus_in, cfg.data_fraction);
    const auto held = eval_set(corpus, cfg.eval_windows);
    const auto which = trainable_for(cfg.method);
    const auto hashes_before = frozen_hashes(model, cfg.method);

    std::mt19937_64 rng(cfg.seed ^ 0x6d66742d62617463ULL);
    std::uniform_int_distribution<std::size_t> pick(0, corpus.train.size() - 1);
    Optimizer opt(cfg.optimizer, cfg.learning_rate);

    TrainResult result{Checkpoint{model, method_name, {}, {}}, {}, 0, std::numeric_limits<double>::infinity(), 0.0};
    std::map<std::string, Tensor> best;
    const auto t0 = std::chrono::steady_clock::now();
    double initial_loss = 0.0;
    std::size_t over = 0;
    ad::Tape tape;

    for (std::size_t s = 0; s <= cfg.steps; ++s) {
        std::vector<const data::Window*> windows;
        windows.reserve(cfg.batch_size);
        for (std::size_t i = 0; i < cfg.batch_size; ++i) windows.push_back(&corpus.train[pick(rng)]);
        const auto batch = make_batch(windows, model.config().vision_feature_dim, cfg.use_vision);

        tape.reset();
        const auto fr = model.forward(tape, batch, which);
        const auto loss_var = ad::softmax_cross_entropy(tape, fr.logits, batch_targets(windows));
        const double loss = tape.value(loss_var).item();
        if (!std::isfinite(loss)) throw NumericalError("loss became non-finite at step " + std::to_string(s));
        if (s == 0) initial_loss = loss;
        over = loss > 10.0 * initial_loss ? over + 1 : 0;
        if (over >= 100) {
            throw NumericalError("training diverged: loss above 10x its initial value for 100 steps (step " +
                                 std::to_string(s) + ")");
        }

        Metrics rec;
        rec.step = s;
        rec.train_loss = loss;
        rec.eval_loss = kNaN;
        rec.sparsity = model.adaptation() == model::Adaptation::Mask ? mask_sparsity(model, cfg.epsilon) : 0.0;
        if (s % cfg.eval_interval == 0 || s == cfg.steps) {
            rec.eval_loss = evaluate(model, held, cfg.use_vision).loss;
            if (rec.eval_loss < result.best_eval_loss) {
                result.best_eval_loss = rec.eval_loss;
                result.best_step = s;
                if (cfg.keep_best) {
                    best.clear();
                    for (const auto& [name, v] : fr.trainable) best.emplace(name, model.tensor(name));
                }
            }
        }
        rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.history.push_back(rec);
        if (s == cfg.steps) break;

        tape.backward(loss_var);
        std::map<std::string, Tensor> grads;
        for (const auto& [name, v] : fr.trainable) {
            if (tape.has_grad(v)) grads.emplace(name, tape.grad(v));
        }
        const double delta = opt.step(model, grads);
        if (which == model::Trainable::Scores) result.max_score_step = std::max(result.max_score_step, delta);
        if (hook) hook(model, s + 1);
    }

    if (cfg.keep_best) {
        for (auto& [name, t] : best) model.tensor(name) = std::move(t);
    }
    const auto hashes_after = frozen_hashes(model, cfg.method);
    for (const auto& [name, h] : hashes_before) {
        auto it = hashes_after.find(name);
        if (it == hashes_after.end() || it->second != h) {
            throw FrozenWeightViolation("frozen tensor '" + name + "' changed during " + method_name + " training");
        }
    }

    Checkpoint& ck = result.checkpoint;
    ck.model = std::move(model);
    ck.history = result.history;
    ck.info["seed"] = std::to_string(cfg.seed);
    ck.info["steps"] = std::to_string(cfg.steps);
    ck.info["learning_rate"] = format_double(cfg.learning_rate);
    ck.info["optimizer"] = std::string(to_string(cfg.optimizer));
    ck.info["batch_size"] = std::to_string(cfg.batch_size);
    ck.info["context_length"] = std::to_string(cfg.context_length);
    ck.info["data_fraction"] = format_double(cfg.data_fraction);
    ck.info["train_windows"] = std::to_string(corpus.train.size());
    ck.info["train_digest"] = data::windows_digest(corpus.train);
    ck.info["best_step"] = std::to_string(result.best_step);
    ck.info["best_eval_loss"] = format_double(result.best_eval_loss);
    ck.info["use_vision"] = cfg.use_vision ? "true" : "false";
    return result;
}

void require_base(const Checkpoint& base) {
    if (base.model.adaptation() != model::Adaptation::None) {
        throw ConfigError("fine-tuning needs an unadapted base checkpoint (got method " + base.method + ")");
    }
}

} // namespace

TrainResult pretrain_toy(const model::ModelConfig& config, const data::Corpus& corpus_a, const TrainConfig& train) {
    if (train.method != Method::FFT) throw ConfigError("pretraining uses method fft");
    train.validate();
    if (corpus_a.train.empty()) throw ConfigError("pretraining corpus is empty");
    auto model = model::ToyVLM::build(config, train.seed);
    auto r = run(std::move(model), train, corpus_a, "base", {});
    r.checkpoint.info["corpus"] = corpus_a.source;
    return r;
}

TrainResult train_mft(const Checkpoint& base, const TrainConfig& config, const data::Corpus& corpus_b,
                      const StepHook& hook) {
    if (!is_mask_method(config.method)) {
        throw ConfigError("train_mft needs method smft, smft_ste or hmft (got " + std::string(to_string(config.method)) + ")");
    }
    config.validate();
    require_base(base);
    auto model = base.model;
    model.apply_placement(*config.placement, *config.mask_spec, config.seed);
    auto r = run(std::move(model), config, corpus_b, std::string(to_string(config.method)), hook);
    r.checkpoint.info["corpus"] = corpus_b.source;
    if (config.mask_spec->kind == masking::MaskKind::Hard) {
        r.checkpoint.info["hmft_scope"] = "per-layer";
    }
    return r;
}

TrainResult train_fft_baseline(const Checkpoint& base, const TrainConfig& config, const data::Corpus& corpus_b,
                               const StepHook& hook) {
    if (config.method != Method::FFT) throw ConfigError("train_fft_baseline needs method fft");
    config.validate();
    require_base(base);
    auto r = run(base.model, config, corpus_b, "fft", hook);
    r.checkpoint.info["corpus"] = corpus_b.source;
    return r;
}

TrainResult train_lora_baseline(const Checkpoint& base, const TrainConfig& config, const data::Corpus& corpus_b,
                                const StepHook& hook) {
    if (config.method != Method::LoRA) throw ConfigError("train_lora_baseline needs method lora");
    config.validate();
    require_base(base);
    auto model = base.model;
    model.apply_lora(*config.placement, *config.lora_rank, config.seed);
    auto r = run(std::move(model), config, corpus_b, "lora", hook);
    r.checkpoint.info["corpus"] = corpus_b.source;
    return r;
}

TrainResult finetune(const Checkpoint& base, const TrainConfig& config, const data::Corpus& corpus_b,
                     const StepHook& hook) {
    switch (config.method) {
    case Method::FFT: return train_fft_baseline(base, config, corpus_b, hook);
    case Method::LoRA: return train_lora_baseline(base, config, corpus_b, hook);
    default: return train_mft(base, config, corpus_b, hook);
    }
}

std::string_view to_string(SweepAxis a) {
    switch (a) {
    case SweepAxis::InitTemperature: return "init-temperature";
    case SweepAxis::LearningRate: return "learning-rate";
    case SweepAxis::DataFraction: return "data-fraction";
    case SweepAxis::LayerRange: return "layer-range";
    }
    return "?";
}

SweepAxis parse_sweep_axis(std::string_view text) {
    for (auto a : {SweepAxis::InitTemperature, SweepAxis::LearningRate, SweepAxis::DataFraction, SweepAxis::LayerRange}) {
        if (to_string(a) == text) return a;
    }
    throw ConfigError("unknown sweep axis '" + std::string(text) +
                      "' (expected init-temperature, learning-rate, data-fraction or layer-range)");
}

std::vector<SweepCell> sweep_grid(SweepAxis axis, const TrainConfig& base, const std::vector<double>& values,
                                  const std::vector<double>& values2, std::size_t num_layers, std::size_t width) {
    std::vector<SweepCell> cells;
    switch (axis) {
    case SweepAxis::InitTemperature: {
        if (values.empty() || values2.empty()) throw ConfigError("init-temperature sweep needs init and temperature grids");
        if (!base.mask_spec || base.mask_spec->kind != masking::MaskKind::Soft) {
            throw ConfigError("init-temperature sweep needs a soft-mask method");
        }
        for (double init : values) {
            for (double t : values2) {
                auto c = base;
                c.mask_spec = masking::MaskSpec::soft(init, t, base.mask_spec->grad_mode);
                cells.push_back({"init=" + format_double(init) + " T=" + format_double(t), c});
            }
        }
        break;
    }
    case SweepAxis::LearningRate:
        for (double lr : values) {
            auto c = base;
            c.learning_rate = lr;
            cells.push_back({"lr=" + format_double(lr), c});
        }
        break;
    case SweepAxis::DataFraction:
        for (double f : values) {
            auto c = base;
            c.data_fraction = f;
            cells.push_back({"fraction=" + format_double(f), c});
        }
        break;
    case SweepAxis::LayerRange: {
        if (!base.placement) throw ConfigError("layer-range sweep needs a placement");
        if (num_layers == 0) throw ConfigError("layer-range sweep needs the model's layer count");
        if (width > num_layers) throw ConfigError("layer-range width exceeds the layer count");
        auto add = [&](std::size_t lo, std::size_t hi) {
            for (const auto& c : cells) {
                if (c.config.placement->layer_lo == lo && c.config.placement->layer_hi == hi) return;
            }
            auto c = base;
            c.placement->layer_lo = lo;
            c.placement->layer_hi = hi;
            cells.push_back({"layers=" + std::to_string(lo) + "-" + std::to_string(hi), c});
        };
        for (std::size_t w = 1; w <= num_layers; ++w) {
            if (width != 0 && w != width) continue;
            for (std::size_t lo = 0; lo + w <= num_layers; ++lo) add(lo, lo + w - 1);
        }
        add(0, num_layers - 1);
        break;
    }
    }
    if (cells.empty()) throw ConfigError("sweep grid is empty");
    return cells;
}

std::vector<SweepRow> sweep(const Checkpoint& base, const std::vector<SweepCell>& cells, const data::Corpus& corpus_b,
                            std::size_t threads, bool keep_checkpoints) {
    if (cells.empty()) throw ConfigError("sweep grid is empty");
    std::vector<SweepRow> rows(cells.size());
    auto run_cell = [&](std::size_t i) {
        SweepRow& row = rows[i];
        row.label = cells[i].label;
        row.steps = cells[i].config.steps;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            auto r = finetune(base, cells[i].config, corpus_b);
            row.ok = true;
            row.final_train_loss = r.history.back().train_loss;
            row.best_eval_loss = r.best_eval_loss;
            row.sparsity = r.checkpoint.model.adaptation() == model::Adaptation::Mask
                               ? mask_sparsity(r.checkpoint.model, cells[i].config.epsilon)
                               : 0.0;
            row.train_windows = std::stoull(r.checkpoint.info.at("train_windows"));
            if (keep_checkpoints) row.checkpoint = std::move(r.checkpoint);
        } catch (const std::exception& e) {
            row.ok = false;
            row.error = e.what();
        }
        row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    };
    const std::size_t workers = std::max<std::size_t>(1, std::min(threads, cells.size()));
    if (workers == 1) {
        for (std::size_t i = 0; i < cells.size(); ++i) run_cell(i);
        return rows;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < cells.size(); i = next++) run_cell(i);
        });
    }
    for (auto& t : pool) t.join();
    return rows;
}

std::string format_sweep_table(const std::vector<SweepRow>& rows) {
    std::ostringstream out;
    out << "label\tstatus\tfinal_train_loss\tbest_eval_loss\tsparsity\ttrain_windows\tsteps\twall_seconds\terror\n";
    for (const auto& r : rows) {
        out << r.label << '\t' << (r.ok ? "ok" : "failed") << '\t' << (r.ok ? format_double(r.final_train_loss) : "nan")
            << '\t' << (r.ok ? format_double(r.best_eval_loss) : "nan") << '\t' << format_double(r.sparsity) << '\t'
            << r.train_windows << '\t' << r.steps << '\t' << format_double(r.wall_seconds) << '\t' << r.error << '\n';
    }
    return out.str();
}

std::string format_metrics(const std::vector<Metrics>& history) {
    std::ostringstream out;
    out << "step\ttrain_loss\teval_loss\tsparsity\twall_seconds\n";
    for (const auto& m : history) {
        out << m.step << '\t' << format_double(m.train_loss) << '\t' << format_double(m.eval_loss) << '\t'
            << format_double(m.sparsity) << '\t' << format_double(m.wall_seconds) << '\n';
    }
    return out.str();
}

} // namespace mft::train
