#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mft/model.hpp"
#include "mft/training.hpp"

namespace mft::cli {

/// Declarative run description. Text format: one `key = value` per line,
/// `#` starts a comment, unknown or repeated keys are rejected with
/// file:line. Keys are listed in runspec_keys().
struct RunSpec {
    std::string source = "<inline>";
    model::ModelConfig model;
    std::uint64_t seed = 0;
    /// Pretraining run (always method fft).
    train::TrainConfig pretrain;
    /// Present when train.method is given.
    std::optional<train::TrainConfig> finetune;
    /// HMFT: file written by `analyze --emergent-sparsity`, read for k.
    std::optional<std::filesystem::path> sparsity_from;
    std::optional<std::filesystem::path> corpus_a;
    std::optional<std::filesystem::path> corpus_b;
    std::filesystem::path output_dir = "out";
    std::optional<std::string> sweep_axis;
    std::vector<double> sweep_values;
    std::vector<double> sweep_values2;
    std::size_t sweep_width = 0;
};

/// `overrides` replace or add keys as if they were written in the text.
RunSpec parse_runspec(std::string_view text, const std::string& source = "<inline>",
                      const std::map<std::string, std::string>& overrides = {});
RunSpec load_runspec(const std::filesystem::path& path, const std::map<std::string, std::string>& overrides = {});

/// Fully resolved spec in the same format; parsing it yields an equal run.
std::string echo_runspec(const RunSpec& spec);

/// Every accepted key with a one-line description.
const std::vector<std::pair<std::string, std::string>>& runspec_keys();

/// Re-seeds every sub-config (pretrain and finetune) from one value.
void apply_seed(RunSpec& spec, std::uint64_t seed);

/// Comma-separated numbers.
std::vector<double> parse_number_list(std::string_view text, const std::string& what);

/// Lists every ModelConfig field that differs, "" when equal.
std::string config_differences(const model::ModelConfig& expected, const model::ModelConfig& actual);

/// Reads the `p = <value>` line of an emergent-sparsity report.
double read_sparsity_file(const std::filesystem::path& path);

} // namespace mft::cli
