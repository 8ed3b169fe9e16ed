#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mft/checkpoint.hpp"
#include "mft/model.hpp"

namespace mft::analysis {

struct GroupFraction {
    std::string label;
    double fraction = 0.0;
    std::size_t below = 0;
    std::size_t size = 0;
};

/// Near-zero mask proportions. per_layer has one group per masked
/// transformer layer ("layer.<i>") plus "projector" when it is masked, so
/// global_p is the size-weighted mean over per_layer and over per_projection.
struct SparsityReport {
    double epsilon = 0.0;
    std::vector<GroupFraction> per_projection;
    std::vector<GroupFraction> per_layer;
    double global_p = 0.0;
    std::size_t below = 0;
    std::size_t total = 0;
};

/// Rejects checkpoints without masks.
SparsityReport near_zero_report(const Checkpoint& ckpt, double epsilon);

/// −p log₂ p − (1−p) log₂(1−p), with H(0) = H(1) = 0.
double binary_entropy(double p);

struct ComplexityDelta {
    double p = 0.0;
    double b = 0.0;
    double d = 0.0;
    double entropy = 0.0;
    /// H(p) − b·p
    double per_weight = 0.0;
    /// d·(H(p) − b·p)
    double total = 0.0;
    /// b·d
    double c_fft = 0.0;
    /// b(1−p)d + d·H(p)
    double c_smft = 0.0;
    /// log₂ C(d, z) − b·z with z = round(p·d), computed for d ≤ 10⁶.
    std::optional<double> exact_total;
};

ComplexityDelta complexity_delta(double p, double b, double d);

/// log₂ of the binomial coefficient C(d, z).
double log2_binomial(double d, double z);

/// The p in (0, 1/2] where H(p) = b·p, located by bisection. Requires b > 2
/// so that a root exists below 1/2.
double breakeven_p(double b, double tolerance = 1e-14);

/// √((u + ln(1/δ)) / (2(n − 1)))
double pac_phi(double u, double n, double delta);

struct BoundInputs {
    /// Training-set size and confidence; Φ is only evaluated when both are
    /// given, since no default is meaningful.
    std::optional<double> n;
    std::optional<double> delta;
    double b = 8.0;
    double d = 1.0;
    double z = 0.0;
    double train_loss_fft = 0.0;
    double train_loss_mft = 0.0;
    /// Throws ConfigError when an invariant fails.
    void validate() const;
};

enum class Verdict { Negative, Tie, Positive };
std::string_view to_string(Verdict v);

struct BoundReport {
    BoundInputs inputs;
    double p = 0.0;
    double delta_train = 0.0;
    double H_p = 0.0;
    double per_weight_complexity = 0.0;
    double delta_complexity = 0.0;
    double c_fft = 0.0;
    double c_smft = 0.0;
    std::optional<double> exact_delta_complexity;
    std::optional<double> phi_fft;
    std::optional<double> phi_mft;
    /// Δ_train + Δ_complexity (the linearized difference of the two bounds).
    double linearized_sum = 0.0;
    /// Δ_train + Φ(C_SMFT) − Φ(C_FFT).
    std::optional<double> phi_sum;
    Verdict verdict = Verdict::Tie;
    /// The Φ route and the linearized route disagree in sign.
    bool sign_disagreement = false;
};

BoundReport bound_comparison(const BoundInputs& inputs);

struct RatioRow {
    std::string label;
    std::size_t trainable = 0;
    std::size_t total = 0;
    double ratio = 0.0;
};

/// FFT, Attn, MLP, Both (and LoRA when rank > 0) on a fresh model of `config`.
std::vector<RatioRow> trainable_ratio_table(const model::ModelConfig& config, std::size_t lora_rank = 0);

/// Trainable ratio of a stored checkpoint; FFT checkpoints count every weight.
RatioRow checkpoint_ratio(const Checkpoint& ckpt);

std::string format_sparsity_report(const SparsityReport& r);
std::string sparsity_report_csv(const SparsityReport& r);
std::string format_bound_report(const BoundReport& r);
std::string format_ratio_table(const std::vector<RatioRow>& rows);
std::string ratio_table_csv(const std::vector<RatioRow>& rows);

} // namespace mft::analysis
