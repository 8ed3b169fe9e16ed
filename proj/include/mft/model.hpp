#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mft/autodiff.hpp"
#include "mft/masking.hpp"
#include "mft/tensor.hpp"

namespace mft::model {

/// Linear sublayers a placement policy can target.
enum class Projection { Q, K, V, O, Gate, Up, Down, Projector };

inline constexpr std::array<Projection, 8> kAllProjections{Projection::Q,    Projection::K,  Projection::V,
                                                           Projection::O,    Projection::Gate, Projection::Up,
                                                           Projection::Down, Projection::Projector};

std::string_view to_string(Projection p);
Projection parse_projection(std::string_view text);
bool is_attention(Projection p);
bool is_mlp(Projection p);

struct ModelConfig {
    std::size_t vocab_size = 256;
    std::size_t embed_dim = 64;
    std::size_t num_layers = 4;
    std::size_t num_heads = 4;
    std::size_t mlp_hidden_dim = 128;
    std::size_t context_length = 256;
    /// Raw synthetic vision feature width fed to the frozen stub.
    std::size_t vision_feature_dim = 16;
    /// Output width of the stub and input width of the projector.
    std::size_t vision_stub_dim = 32;
    /// gate/up/down MLP when true, up/down with GELU otherwise.
    bool gated_mlp = true;

    /// Throws ConfigError naming the offending field.
    void validate() const;
    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Which sublayers receive masks (or low-rank adapters) and over which
/// inclusive range of transformer layers. The projector is not bound to a
/// layer and is covered whenever it is listed.
struct PlacementPolicy {
    std::vector<Projection> targets;
    std::size_t layer_lo = 0;
    std::size_t layer_hi = 0;

    static PlacementPolicy attention(std::size_t num_layers);
    static PlacementPolicy mlp(std::size_t num_layers);
    /// All seven attention and MLP kinds.
    static PlacementPolicy both(std::size_t num_layers);

    void validate(const ModelConfig& config) const;
    bool targets_kind(Projection p) const;
    bool covers(Projection p, std::optional<std::size_t> layer) const;

    /// "q,k,v" style list.
    std::string targets_string() const;
    static std::vector<Projection> parse_targets(std::string_view text);

    friend bool operator==(const PlacementPolicy&, const PlacementPolicy&) = default;
};

/// A linear map of the model that adaptation may wrap.
struct LinearSlot {
    std::string name;
    Projection kind;
    std::optional<std::size_t> layer;
    std::string weight;
    std::optional<std::string> bias;
};

enum class Adaptation { None, Mask, LowRank };

/// Which tensors a forward pass marks as requiring gradients.
enum class Trainable { Nothing, Base, Scores, LowRank };

struct Batch {
    std::size_t batch = 0;
    std::size_t seq = 0;
    /// batch·seq token ids, sequence-major per item.
    std::vector<std::int32_t> tokens;
    /// Optional [batch × vision_feature_dim] features, prepended as one
    /// prefix position per item.
    std::optional<Tensor> vision;
};

struct ForwardResult {
    /// [batch·seq × vocab]
    ad::Var logits;
    /// Leaves that require gradients, by tensor name.
    std::map<std::string, ad::Var> trainable;
};

struct TrainableCount {
    std::size_t trainable = 0;
    std::size_t total = 0;
    double ratio = 0.0;
};

/// Decoder-only byte LM with a frozen vision stub and a projector front end.
/// Pre-norm blocks with RMS normalization, multi-head causal attention and a
/// gated (or two-matrix) MLP. All tensors live in one name-ordered map:
/// base weights under plain names, mask scores under "scores/<slot>", low-rank
/// factors under "lora_down/<slot>" and "lora_up/<slot>".
class ToyVLM {
public:
    /// Randomly initialized model, bit-identical for equal seeds.
    static ToyVLM build(const ModelConfig& config, std::uint64_t seed);
    /// Unadapted model from stored base tensors; every expected tensor must be
    /// present with its expected shape. Adapter tensors are carried over
    /// verbatim for restore_adaptation().
    static ToyVLM from_tensors(const ModelConfig& config, std::map<std::string, Tensor> tensors);

    const ModelConfig& config() const noexcept { return config_; }
    const std::vector<LinearSlot>& slots() const noexcept { return slots_; }
    const LinearSlot& slot(std::string_view name) const;

    std::map<std::string, Tensor>& tensors() noexcept { return tensors_; }
    const std::map<std::string, Tensor>& tensors() const noexcept { return tensors_; }
    Tensor& tensor(const std::string& name);
    const Tensor& tensor(const std::string& name) const;

    /// Base weights (everything that is not an adapter tensor).
    std::vector<std::string> base_names() const;
    /// Base weights counted as model parameters: all except the vision stub.
    std::vector<std::string> parameter_names() const;
    std::vector<std::string> adapter_names() const;

    Adaptation adaptation() const noexcept { return adaptation_; }
    const std::optional<PlacementPolicy>& placement() const noexcept { return placement_; }
    const std::optional<masking::MaskSpec>& mask_spec() const noexcept { return mask_spec_; }
    std::size_t lora_rank() const noexcept { return lora_rank_; }

    /// Wraps every targeted slot in a mask over its frozen weight. Rejected
    /// when the model already carries an adaptation.
    void apply_placement(const PlacementPolicy& policy, const masking::MaskSpec& spec, std::uint64_t seed);
    /// Adds W + up·down adapters (up zero-initialized) on the targeted slots.
    void apply_lora(const PlacementPolicy& policy, std::size_t rank, std::uint64_t seed);

    /// Restores adaptation metadata when loading from a checkpoint; the adapter
    /// tensors must already be present.
    void restore_adaptation(Adaptation kind, std::optional<PlacementPolicy> policy,
                            std::optional<masking::MaskSpec> spec, std::size_t rank);
    /// Replaces the mask spec (used to change the hard-mask sparsity).
    void set_mask_spec(const masking::MaskSpec& spec);

    /// Current mask of a masked slot.
    Tensor mask_of(const std::string& slot_name) const;
    std::vector<std::string> masked_slots() const;

    ForwardResult forward(ad::Tape& tape, const Batch& batch, Trainable which) const;
    /// Logits as a [batch × seq × vocab] tensor, no gradients.
    Tensor logits(const Batch& batch) const;

private:
    ToyVLM() = default;
    ad::Var apply_linear(ad::Tape& tape, const LinearSlot& slot, ad::Var x,
                         const std::map<std::string, ad::Var>& vars) const;

    ModelConfig config_;
    std::map<std::string, Tensor> tensors_;
    std::vector<LinearSlot> slots_;
    Adaptation adaptation_ = Adaptation::None;
    std::optional<PlacementPolicy> placement_;
    std::optional<masking::MaskSpec> mask_spec_;
    std::size_t lora_rank_ = 0;
};

/// Parameter counting: total excludes the frozen vision stub; trainable is
/// every base parameter for full fine-tuning, else the adapter tensors.
TrainableCount count_trainable(const ToyVLM& model, bool full_finetune = false);

bool is_adapter_name(std::string_view name);

} // namespace mft::model
