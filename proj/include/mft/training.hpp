#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "mft/checkpoint.hpp"
#include "mft/corpus.hpp"
#include "mft/masking.hpp"
#include "mft/model.hpp"

namespace mft::train {

enum class Method { SMFT, SMFT_STE, HMFT, FFT, LoRA };
enum class OptimizerKind { SGD, Momentum, Adam };

std::string_view to_string(Method m);
Method parse_method(std::string_view text);
std::string_view to_string(OptimizerKind k);
OptimizerKind parse_optimizer(std::string_view text);
bool is_mask_method(Method m);

struct TrainConfig {
    Method method = Method::SMFT;
    std::optional<masking::MaskSpec> mask_spec;
    std::optional<model::PlacementPolicy> placement;
    double learning_rate = 0.1;
    std::size_t steps = 500;
    std::size_t batch_size = 16;
    /// Tokens per training window; the model predicts context_length − 1.
    std::size_t context_length = 64;
    std::uint64_t seed = 0;
    double data_fraction = 1.0;
    std::optional<std::size_t> lora_rank;
    OptimizerKind optimizer = OptimizerKind::SGD;
    /// Evaluate on held-out windows at step 0, every eval_interval steps and
    /// at the final step.
    std::size_t eval_interval = 100;
    /// Held-out windows per evaluation; 0 uses all of them.
    std::size_t eval_windows = 0;
    /// Near-zero threshold for the sparsity column of the metrics.
    double epsilon = 0.01;
    /// Keep the parameters of the best evaluation rather than the last step.
    bool keep_best = true;
    /// Feed per-window synthetic vision features through the projector.
    bool use_vision = true;

    /// Throws ConfigError when the method/spec/placement combination or any
    /// numeric field is invalid.
    void validate() const;
};

/// Called after every parameter update; tests use it to inject faults.
using StepHook = std::function<void(model::ToyVLM&, std::size_t step)>;

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<Metrics> history;
    /// Step whose parameters were kept.
    std::size_t best_step = 0;
    double best_eval_loss = 0.0;
    /// Largest |ΔS| seen in a single update (mask methods only).
    double max_score_step = 0.0;
};

struct EvalResult {
    double loss = 0.0;
    double perplexity = 0.0;
    std::size_t windows = 0;
};

/// Deterministic vision features for a token window: a byte histogram folded
/// into `dim` buckets, standardized to zero mean and unit variance.
std::vector<double> vision_features(const data::Window& window, std::size_t dim);

/// Inputs are window[0..n−2], targets window[1..n−1].
model::Batch make_batch(const std::vector<const data::Window*>& windows, std::size_t vision_dim, bool use_vision);
std::vector<std::int32_t> batch_targets(const std::vector<const data::Window*>& windows);

/// Mean next-token loss over the given windows, evaluated in chunks.
EvalResult evaluate(const model::ToyVLM& model, const std::vector<data::Window>& windows, bool use_vision = true,
                    std::size_t chunk = 32);
EvalResult evaluate(const Checkpoint& ckpt, const data::Corpus& corpus, bool use_vision = true);

/// Full training of a freshly built model on corpus A. Uses config.optimizer,
/// learning_rate, steps and batch settings; method must be FFT.
TrainResult pretrain_toy(const model::ModelConfig& config, const data::Corpus& corpus_a, const TrainConfig& train);

/// Mask fine-tuning: only score tensors move; frozen hashes are checked after
/// the run (FrozenWeightViolation otherwise).
TrainResult train_mft(const Checkpoint& base, const TrainConfig& config, const data::Corpus& corpus_b,
                      const StepHook& hook = {});
TrainResult train_fft_baseline(const Checkpoint& base, const TrainConfig& config, const data::Corpus& corpus_b,
                               const StepHook& hook = {});
TrainResult train_lora_baseline(const Checkpoint& base, const TrainConfig& config, const data::Corpus& corpus_b,
                                const StepHook& hook = {});
/// Dispatches on config.method.
TrainResult finetune(const Checkpoint& base, const TrainConfig& config, const data::Corpus& corpus_b,
                     const StepHook& hook = {});

struct SparsityBreakdown {
    double p = 0.0;
    std::size_t below = 0;
    std::size_t total = 0;
    /// Per masked slot: fraction below epsilon.
    std::map<std::string, double> per_slot;
};

/// Fraction of soft-mask values below epsilon across every masked layer.
SparsityBreakdown extract_emergent_sparsity(const Checkpoint& soft, double epsilon);

/// Fraction of mask values below epsilon over the current model.
double mask_sparsity(const model::ToyVLM& model, double epsilon);

/// SHA-256 of every tensor that must stay frozen under `method`.
std::map<std::string, std::string> frozen_hashes(const model::ToyVLM& model, Method method);

enum class SweepAxis { InitTemperature, LearningRate, DataFraction, LayerRange };
std::string_view to_string(SweepAxis a);
SweepAxis parse_sweep_axis(std::string_view text);

struct SweepCell {
    std::string label;
    TrainConfig config;
};

struct SweepRow {
    std::string label;
    bool ok = false;
    std::string error;
    double final_train_loss = 0.0;
    double best_eval_loss = 0.0;
    double sparsity = 0.0;
    std::size_t train_windows = 0;
    std::size_t steps = 0;
    double wall_seconds = 0.0;
    std::optional<Checkpoint> checkpoint;
};

/// Grid cells for one axis. InitTemperature takes the cross product of
/// `values` (inits) and `values2` (temperatures); LayerRange takes every
/// contiguous range of `width` layers (every width when width is 0) plus
/// the full range.
std::vector<SweepCell> sweep_grid(SweepAxis axis, const TrainConfig& base, const std::vector<double>& values,
                                  const std::vector<double>& values2 = {}, std::size_t num_layers = 0,
                                  std::size_t width = 0);

/// Runs each cell independently; failures are recorded per row. Up to
/// `threads` cells run concurrently; rows keep grid order.
std::vector<SweepRow> sweep(const Checkpoint& base, const std::vector<SweepCell>& cells, const data::Corpus& corpus_b,
                            std::size_t threads = 1, bool keep_checkpoints = false);

/// Tab-separated results table with a header line.
std::string format_sweep_table(const std::vector<SweepRow>& rows);
/// Plain-text metrics log: one line per record.
std::string format_metrics(const std::vector<Metrics>& history);

/// Raises glibc's mmap/trim thresholds so the per-step tensor churn reuses
/// heap pages instead of faulting fresh ones. Safe to call repeatedly.
void tune_allocator();

} // namespace mft::train
