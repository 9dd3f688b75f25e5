#pragma once

// Adapter injection into attention query/value projections, freezing
// control, parameter accounting, adapter checkpoints and weight merging.

#include <filesystem>
#include <string>

#include "samlp/archive.hpp"
#include "samlp/lora_layer.hpp"
#include "samlp/model.hpp"

namespace samlp {

enum class TrainingStage { lora, promptable };

std::string to_string(TrainingStage s);
TrainingStage stage_from_string(const std::string& s);

/// Wraps the query and value projections of every attention inside the
/// plan's targets and freezes all base parameters. Throws ValidationError on
/// an empty target set or a prompt-encoder target, ConfigError if the model
/// already carries adapters.
void inject(SamModel& model, const InjectionPlan& plan);

/// Number of parameters currently flagged trainable.
std::int64_t trainable_parameter_count(const SamModel& model);

/// Sum of rank * (d + k) over the adapters of one component.
std::int64_t lora_parameter_count(const SamModel& model, Component c);

/// Stage `lora`: exactly the adapter arrays are trainable.
/// Stage `promptable`: prompt-encoder parameters and mask-decoder adapters;
/// with `freeze_prompt_encoder` the prompt encoder stays frozen as well.
void set_stage_trainability(SamModel& model, TrainingStage stage, bool freeze_prompt_encoder = false);

struct AdapterCheckpoint {
    InjectionPlan plan;
    TrainingStage stage = TrainingStage::lora;
    std::uint64_t config_hash = 0;
    ModelConfig model_config;
    Archive archive;
};

/// Writes adapter arrays (plus the prompt encoder after stage 2) and the
/// JSON manifest. Base weights are never written.
AdapterCheckpoint save_adapter(const SamModel& model, TrainingStage stage, const std::filesystem::path& path);

/// Restores adapter arrays into `model`, injecting first if needed. Throws
/// ConfigError when the configuration hash or plan does not match.
AdapterCheckpoint load_adapter(SamModel& model, const std::filesystem::path& path);

/// Full-weight checkpoint of every parameter (adapters included when present).
void save_model(const SamModel& model, const std::filesystem::path& path);
SamModel load_model(const std::filesystem::path& path);

/// Copy of `model` with every adapter folded into its base weight (W0 + BA)
/// and no adapters left.
SamModel merge_adapters(const SamModel& model);

std::string hash_hex(std::uint64_t h);

}  // namespace samlp
