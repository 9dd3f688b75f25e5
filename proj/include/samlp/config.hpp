#pragma once

// Resolved run configuration shared by every CLI command. Precedence:
// command-line flags > JSON file > defaults.

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "samlp/data.hpp"
#include "samlp/evaluation.hpp"
#include "samlp/inference.hpp"
#include "samlp/model.hpp"
#include "samlp/training.hpp"

namespace samlp {

struct DatasetSpec {
    /// "synth", "generic_json", "ufpr" or "ccpd".
    std::string format = "synth";
    std::filesystem::path root;
    std::int64_t synth_n = 8;
    std::uint64_t synth_seed = 0;
    SynthConfig synth;
    /// Extra synthetic test-split images drawn from an independent stream.
    std::int64_t synth_test_n = 0;
    bool ufpr_corner_masks = false;
};

struct RunConfig {
    ScalePreset preset = ScalePreset::tiny;
    /// Field-wise overrides applied on top of the preset.
    nlohmann::json model_overrides = nlohmann::json::object();
    InjectionPlan injection;
    TrainConfig train;
    InferenceConfig inference;
    EvalConfig eval;
    DatasetSpec dataset;
    std::filesystem::path out = "out";
    /// Optional full-weight checkpoint replacing the seeded base weights.
    std::filesystem::path base;

    /// Preset merged with overrides; throws ConfigError if invalid.
    ModelConfig model() const;
    /// Base model: `base` checkpoint when set (its config must equal model()),
    /// otherwise the seeded weights.
    SamModel base_model() const;
};

void to_json(nlohmann::json& j, const DatasetSpec& d);
void from_json(const nlohmann::json& j, DatasetSpec& d);
void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

RunConfig load_run_config(const std::filesystem::path& path);
/// Pretty-printed resolved configuration (stable key order).
void write_run_config(const std::filesystem::path& path, const RunConfig& c);

/// Loads or synthesises the dataset described by `spec`; per-file loader
/// errors are reported on stderr.
std::vector<Sample> load_samples(const DatasetSpec& spec);

std::vector<Sample> filter_split(const std::vector<Sample>& samples, Split split);

}  // namespace samlp
