#pragma once

// None-prompt prediction with score-based level selection, iterative
// mask-prompt refinement, and single-shot prediction with caller prompts.

#include <cstdint>
#include <vector>

#include "samlp/model.hpp"

namespace samlp {

struct InferenceConfig {
    /// Extra refinement passes after the None-prompt pass.
    int refine_iters = 1;
    /// Logit threshold of the selected mask.
    float binarize_threshold = 0.0f;
    /// Feed a {-20, +20} step map instead of raw logits back as the mask prompt.
    bool binarize_mask_prompt = false;

    void validate() const;
};

struct PredictionResult {
    std::vector<std::uint8_t> selected_mask;  // image_size^2, canvas space
    float selected_score = 0.0f;
    int selected_level = 0;
    MaskPrediction all_levels;
    int iterations_used = 0;
    std::int64_t mask_size = 0;
};

/// Index of the largest score; ties go to the lowest index.
int select_level(const Tensor& scores);

/// Mask prompt derived from one level of a prediction (detached).
Tensor mask_prompt_from(const MaskPrediction& pred, int level, bool binarize);

PredictionResult predict(const SamModel& model, const Tensor& canvas, const InferenceConfig& cfg = {});
PredictionResult predict_refined(const SamModel& model, const Tensor& canvas, const InferenceConfig& cfg = {});
PredictionResult predict_with_prompts(const SamModel& model, const Tensor& canvas, const PromptSet& prompts,
                                      const InferenceConfig& cfg = {});

/// Same as the functions above for a precomputed image embedding.
PredictionResult predict_from_embedding(const SamModel& model, const ImageEmbedding& embedding, const PromptSet& prompts,
                                        const InferenceConfig& cfg = {});
PredictionResult predict_refined_from_embedding(const SamModel& model, const ImageEmbedding& embedding,
                                                const InferenceConfig& cfg = {});

}  // namespace samlp
