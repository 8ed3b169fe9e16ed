#include <doctest.h>

#include <cmath>

#include "mft/error.hpp"
#include "mft/hash.hpp"
#include "mft/training.hpp"
#include "support/toy_setup.hpp"

using namespace mft;
using namespace mft::train;
using mft::testing::TempDir;

namespace {

struct Fixture {
    TempDir dir{"mft-train"};
    data::Corpus a = testing::toy_corpus(dir, "prose", 30000, 1);
    data::Corpus b = testing::toy_corpus(dir, "records", 12000, 2);
    Checkpoint base = pretrain_toy(testing::toy_config(), a, testing::toy_pretrain(600)).checkpoint;
};

Fixture& fixture() {
    static Fixture f;
    return f;
}

std::vector<std::byte> bytes_of(const Checkpoint& c) { return serialize_checkpoint(c); }

} // namespace

TEST_CASE("train config validation") {
    auto c = testing::toy_smft();
    CHECK_NOTHROW(c.validate());
    auto no_spec = c;
    no_spec.mask_spec.reset();
    CHECK_THROWS_AS(no_spec.validate(), ConfigError);
    auto no_place = c;
    no_place.placement.reset();
    CHECK_THROWS_AS(no_place.validate(), ConfigError);
    auto hard_smft = c;
    hard_smft.mask_spec = masking::MaskSpec::hard(0.1);
    CHECK_THROWS_AS(hard_smft.validate(), ConfigError);
    auto hmft_soft = c;
    hmft_soft.method = Method::HMFT;
    CHECK_THROWS_AS(hmft_soft.validate(), ConfigError);
    auto ste_sigmoid = c;
    ste_sigmoid.method = Method::SMFT_STE;
    CHECK_THROWS_AS(ste_sigmoid.validate(), ConfigError);
    auto fft = c;
    fft.method = Method::FFT;
    CHECK_THROWS_AS(fft.validate(), ConfigError);
    fft.mask_spec.reset();
    CHECK_THROWS_AS(fft.validate(), ConfigError);
    fft.placement.reset();
    CHECK_NOTHROW(fft.validate());
    auto lr = c;
    lr.learning_rate = 0.0;
    CHECK_THROWS_AS(lr.validate(), ConfigError);
    for (auto m : {Method::SMFT, Method::SMFT_STE, Method::HMFT, Method::FFT, Method::LoRA}) {
        CHECK(parse_method(to_string(m)) == m);
    }
    CHECK_THROWS_AS(parse_method("qlora"), ConfigError);
}

TEST_CASE("pretraining beats the uniform predictor") {
    auto& f = fixture();
    const auto r = evaluate(f.base, f.a);
    CHECK(r.loss < std::log(256.0));
    CHECK(r.perplexity == std::exp(r.loss));
    CHECK(f.base.method == "base");
}

TEST_CASE("pretraining is deterministic") {
    auto& f = fixture();
    const auto again = pretrain_toy(testing::toy_config(), f.a, testing::toy_pretrain(600)).checkpoint;
    CHECK(bytes_of(again) == bytes_of(f.base));
}

TEST_CASE("zero steps leave the masked-at-init model") {
    auto& f = fixture();
    auto cfg = testing::toy_smft(0);
    const auto r = train_mft(f.base, cfg, f.b);
    auto init = f.base.model;
    init.apply_placement(*cfg.placement, *cfg.mask_spec, cfg.seed);
    CHECK(r.checkpoint.model.tensors() == init.tensors());
    CHECK(r.history.size() == 1);
}

TEST_CASE("mask fine-tuning moves only scores and is reproducible") {
    auto& f = fixture();
    const auto cfg = testing::toy_smft(20);
    const auto r1 = train_mft(f.base, cfg, f.b);
    const auto r2 = train_mft(f.base, cfg, f.b);
    CHECK(bytes_of(r1.checkpoint) == bytes_of(r2.checkpoint));
    for (const auto& name : f.base.model.base_names()) {
        CHECK(tensor_digest(r1.checkpoint.model.tensor(name)) == tensor_digest(f.base.model.tensor(name)));
    }
    CHECK(r1.max_score_step > 0.0);
    for (const auto& m : r1.history) {
        CHECK(std::isfinite(m.train_loss));
        CHECK(m.sparsity >= 0.0);
        CHECK(m.sparsity <= 1.0);
    }
    CHECK(r1.best_eval_loss < r1.history.front().eval_loss);
}

TEST_CASE("frozen weight changes are caught") {
    auto& f = fixture();
    const StepHook poke = [](model::ToyVLM& m, std::size_t step) {
        if (step == 3) m.tensor("layers.0.q.weight")[0] += 1e-9;
    };
    CHECK_THROWS_AS(train_mft(f.base, testing::toy_smft(5), f.b, poke), FrozenWeightViolation);

    TrainConfig fft;
    fft.method = Method::FFT;
    fft.steps = 3;
    fft.batch_size = 4;
    fft.context_length = 16;
    fft.learning_rate = 1e-3;
    const StepHook stub = [](model::ToyVLM& m, std::size_t) { m.tensor("vision_stub")[0] += 1e-9; };
    CHECK_THROWS_AS(train_fft_baseline(f.base, fft, f.b, stub), FrozenWeightViolation);
}

TEST_CASE("small learning rates leave soft masks static") {
    auto& f = fixture();
    auto cfg = testing::toy_smft(10, 7.0, 2.3);
    cfg.optimizer = OptimizerKind::SGD;
    cfg.learning_rate = 1e-4;
    const auto r = train_mft(f.base, cfg, f.b);
    CHECK(r.max_score_step < 1e-6);
}

TEST_CASE("soft and straight-through runs stay close") {
    auto& f = fixture();
    auto soft = testing::toy_smft(30);
    auto ste = soft;
    ste.method = Method::SMFT_STE;
    ste.mask_spec->grad_mode = masking::GradMode::STE;
    const double a = train_mft(f.base, soft, f.b).best_eval_loss;
    const double b = train_mft(f.base, ste, f.b).best_eval_loss;
    CHECK(std::abs(a - b) / a < 0.05);
}

TEST_CASE("hard masks keep the requested sparsity") {
    auto& f = fixture();
    auto cfg = testing::toy_smft(10);
    cfg.method = Method::HMFT;
    cfg.mask_spec = masking::MaskSpec::hard(0.2, 3.0);
    const auto r = train_mft(f.base, cfg, f.b);
    for (const auto& slot : r.checkpoint.model.masked_slots()) {
        const Tensor m = r.checkpoint.model.mask_of(slot);
        std::size_t zeros = 0;
        for (double v : m.data()) zeros += v == 0.0;
        CHECK(zeros == masking::masked_count(m.size(), 0.2));
    }
    CHECK(r.checkpoint.info.at("hmft_scope") == "per-layer");
    CHECK_THROWS_AS(extract_emergent_sparsity(r.checkpoint, 0.01), ConfigError);
}

TEST_CASE("baselines adapt to the new domain") {
    auto& f = fixture();
    const double zero_shot = evaluate(f.base, f.b).loss;

    TrainConfig fft;
    fft.method = Method::FFT;
    fft.optimizer = OptimizerKind::Adam;
    fft.learning_rate = 3e-3;
    fft.steps = 30;
    fft.batch_size = 8;
    fft.context_length = 16;
    fft.eval_interval = 10;
    const auto rf = finetune(f.base, fft, f.b);
    CHECK(rf.history.back().train_loss < rf.history.front().train_loss);
    CHECK(rf.best_eval_loss < zero_shot);
    CHECK(model::count_trainable(rf.checkpoint.model, true).ratio == 1.0);

    TrainConfig lora = fft;
    lora.method = Method::LoRA;
    lora.placement = model::PlacementPolicy::both(2);
    lora.lora_rank = 2;
    lora.learning_rate = 1e-2;
    const auto rl = finetune(f.base, lora, f.b);
    CHECK(rl.best_eval_loss < zero_shot);
    CHECK_THROWS_AS(finetune(rl.checkpoint, lora, f.b), ConfigError);
}

TEST_CASE("emergent sparsity counts") {
    auto& f = fixture();
    Checkpoint fresh{f.base.model, "base", {}, {}};
    fresh.model.apply_placement(model::PlacementPolicy::both(2), masking::MaskSpec::soft(7.0, 2.3), 0);
    CHECK(extract_emergent_sparsity(fresh, 0.01).p == 0.0);

    model::ModelConfig c = testing::toy_config(1);
    c.embed_dim = 10;
    Checkpoint hand{model::ToyVLM::build(c, 0), "base", {}, {}};
    hand.model.apply_placement(model::PlacementPolicy{{model::Projection::Q}, 0, 0}, masking::MaskSpec::soft(7.0, 2.3),
                               0);
    auto& s = hand.model.tensor("scores/layers.0.q");
    REQUIRE(s.size() == 100);
    s[4] = s[50] = s[99] = -50.0;
    const auto r = extract_emergent_sparsity(hand, 0.01);
    CHECK(r.p == 0.03);
    CHECK(r.below == 3);

    const auto trained = train_mft(f.base, testing::toy_smft(20), f.b).checkpoint;
    double prev = 0.0;
    for (double eps : {1e-4, 1e-2, 0.1, 0.5, 0.9}) {
        const double p = extract_emergent_sparsity(trained, eps).p;
        CHECK(p >= prev);
        prev = p;
    }
    CHECK_THROWS_AS(extract_emergent_sparsity(f.base, 0.01), ConfigError);
}

TEST_CASE("sweep grids") {
    auto base = testing::toy_smft(2);
    CHECK(sweep_grid(SweepAxis::InitTemperature, base, {3, 5, 7, 9}, {0.5, 1.1, 1.3, 2.3}).size() == 16);
    const auto ratio = sweep_grid(SweepAxis::InitTemperature, base, {7.0, 3.5}, {2.3, 1.15});
    CHECK(ratio.size() == 4);
    CHECK(ratio[0].label != ratio[3].label);
    const auto lr = sweep_grid(SweepAxis::LearningRate, base, {1e-4, 1e-2, 1.0});
    CHECK(lr.size() == 3);
    CHECK(lr[2].config.learning_rate == 1.0);

    base.placement = model::PlacementPolicy::both(4);
    const auto ranges = sweep_grid(SweepAxis::LayerRange, base, {}, {}, 4, 2);
    std::vector<std::string> labels;
    for (const auto& c : ranges) labels.push_back(c.label);
    CHECK(labels == std::vector<std::string>{"layers=0-1", "layers=1-2", "layers=2-3", "layers=0-3"});
    CHECK(sweep_grid(SweepAxis::LayerRange, base, {}, {}, 4, 0).size() == 10);
    CHECK_THROWS_AS(sweep_grid(SweepAxis::InitTemperature, base, {3}, {}), ConfigError);
}

TEST_CASE("sweeps match single runs and record failures") {
    auto& f = fixture();
    const auto cfg = testing::toy_smft(5);
    const auto single = train_mft(f.base, cfg, f.b);
    auto cells = sweep_grid(SweepAxis::LearningRate, cfg, {0.1});
    auto broken = cells.front();
    broken.label = "broken";
    broken.config.mask_spec->temperature = -1.0;
    cells.push_back(broken);
    const auto rows = sweep(f.base, cells, f.b, 2, true);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].ok);
    REQUIRE(rows[0].checkpoint);
    CHECK(bytes_of(*rows[0].checkpoint) == bytes_of(single.checkpoint));
    CHECK_FALSE(rows[1].ok);
    CHECK_FALSE(rows[1].error.empty());
    CHECK(format_sweep_table(rows).find("broken") != std::string::npos);

    const auto fractions = sweep(f.base, sweep_grid(SweepAxis::DataFraction, cfg, {0.25, 0.5, 1.0}), f.b, 1);
    for (std::size_t i = 0; i < 3; ++i) {
        const double frac = std::vector<double>{0.25, 0.5, 1.0}[i];
        CHECK(fractions[i].train_windows == static_cast<std::size_t>(std::floor(frac * f.b.train.size())));
    }
}

TEST_CASE("deeper models beat the embedding-only ablation") {
    auto& f = fixture();
    const auto deep = pretrain_toy(testing::toy_config(2), f.a, testing::toy_pretrain(600));
    const auto flat = pretrain_toy(testing::toy_config(0), f.a, testing::toy_pretrain(600));
    CHECK(deep.best_eval_loss < flat.best_eval_loss);
}
