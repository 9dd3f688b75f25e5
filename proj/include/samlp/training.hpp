#pragma once

// Dice supervision over the three mask levels, stage-1 adapter training with
// the None prompt and stage-2 promptable training with iterative prompts.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "samlp/data.hpp"
#include "samlp/lora.hpp"
#include "samlp/model.hpp"

namespace samlp {

struct TrainConfig {
    float base_lr = 5e-3f;
    int batch_size = 2;
    int epochs_stage1 = 160;
    int epochs_stage2 = 320;
    std::uint64_t seed = 0;
    float lr_power = 0.9f;
    /// Training-time prompt iterations (forwards per sample = num_inner_iters + 1).
    int num_inner_iters = 1;
    float dice_smooth = 1.0f;
    /// Regress each IoU score onto the hard IoU of its level.
    bool aux_iou_loss = true;
    float aux_iou_weight = 1.0f;
    /// Stage 2: also supervise the intermediate predictions.
    bool per_iteration_loss = false;
    /// Stage 2: keep the prompt encoder frozen (decoder adapters only).
    bool freeze_prompt_encoder = false;
    /// Stage 2: feed a binarised map instead of raw logits as the mask prompt.
    bool binarize_mask_prompt = false;
    /// Stage 2 prompt composition between iterations; at least one must hold.
    bool stage2_point_prompts = true;
    bool stage2_mask_prompt = true;
    /// Cap on optimizer steps; 0 means epochs * ceil(n / batch_size).
    std::int64_t max_steps = 0;
    /// Optional subset of the training split (first k samples); 0 keeps all.
    std::int64_t train_subset = 0;

    /// Throws ValidationError unless every numeric field is positive.
    void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// 1 - (2 sum(p g) + eps) / (sum p + sum g + eps), with an analytic gradient in `prob`.
Tensor dice_loss(const Tensor& prob, std::span<const float> gt, float eps = 1.0f);

/// Mean of the three per-level dice losses over sigmoid(logits).
Tensor multi_mask_loss(const MaskPrediction& pred, std::span<const float> gt, float eps = 1.0f);

/// Mean squared error between the IoU scores and the hard IoU of each level
/// (logit > 0) against `gt`; the targets carry no gradient.
Tensor iou_score_loss(const MaskPrediction& pred, std::span<const float> gt);

/// base_lr * (1 - iter / total_iters)^lr_power.
float lr_at(std::int64_t iter, std::int64_t total_iters, const TrainConfig& cfg);

struct CorrectionPoints {
    std::optional<PromptPoint> pos;  // in ground truth, not predicted
    std::optional<PromptPoint> neg;  // predicted, not in ground truth
};

/// Uniform draws from the false-negative and false-positive regions of two
/// equally sized row-major binary masks of width `width`.
CorrectionPoints sample_correction_points(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt,
                                          std::int64_t width, std::mt19937_64& rng);

/// A sample moved onto the model canvas once, before training.
struct PreparedSample {
    Tensor canvas;                      // [3 x S x S]
    std::vector<float> gt_logit;        // mask_prompt_size^2, 0/1
    std::vector<std::uint8_t> gt_canvas;  // S^2, 0/1
    CanvasTransform transform;
    std::string source_id;
};

std::vector<PreparedSample> prepare_samples(const std::vector<Sample>& samples, const ModelConfig& cfg,
                                            const Normalization& norm = {});

struct LossRecord {
    int epoch = 0;
    double mean_loss = 0.0;
    double lr = 0.0;
};

struct TrainResult {
    std::vector<LossRecord> curve;
    std::int64_t steps = 0;
    double final_dice = 0.0;  // hard dice over the training set after the last step
};

/// Called after every optimizer step with (step, loss averaged over the batch, lr).
using StepCallback = std::function<void(std::int64_t, double, double)>;

/// None-prompt training of the adapter arrays. Requires an injected model.
/// Throws NumericalError on a non-finite loss.
TrainResult train_stage1(SamModel& model, const std::vector<PreparedSample>& data, const TrainConfig& cfg,
                         const StepCallback& on_step = {});

/// Iterative-prompt training of the prompt encoder and mask-decoder adapters.
TrainResult train_stage2(SamModel& model, const std::vector<PreparedSample>& data, const TrainConfig& cfg,
                         const StepCallback& on_step = {});

/// Mean hard dice of the selected canvas mask against the canvas ground truth.
/// `refine_iters` == 0 is plain None-prompt prediction.
double dataset_dice(const SamModel& model, const std::vector<PreparedSample>& data, int refine_iters = 0);

double hard_dice(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt);

void write_loss_csv(const std::filesystem::path& path, const std::vector<LossRecord>& curve);

}  // namespace samlp
