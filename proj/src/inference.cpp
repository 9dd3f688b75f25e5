#include "samlp/inference.hpp"

#include <algorithm>

#include "samlp/errors.hpp"

namespace samlp {

void InferenceConfig::validate() const {
    if (refine_iters < 0) throw ValidationError("refine_iters must be >= 0");
}

int select_level(const Tensor& scores) {
    int best = 0;
    for (int i = 1; i < static_cast<int>(scores.size()); ++i)
        if (scores.at(i) > scores.at(best)) best = i;
    return best;
}

Tensor mask_prompt_from(const MaskPrediction& pred, int level, bool binarize) {
    auto t = pred.logit_tensor(level);
    if (binarize)
        for (auto& v : t.values()) v = v > 0.0f ? 20.0f : -20.0f;
    return t;
}

PredictionResult predict_from_embedding(const SamModel& model, const ImageEmbedding& embedding, const PromptSet& prompts,
                                        const InferenceConfig& cfg) {
    cfg.validate();
    prompts.validate(model.config());
    NoGradGuard guard;
    PredictionResult r;
    r.all_levels = model.decode_masks(embedding, model.encode_prompts(prompts));
    r.iterations_used = 1;
    r.selected_level = select_level(r.all_levels.iou_scores);
    r.selected_score = r.all_levels.score(r.selected_level);
    r.mask_size = r.all_levels.mask_size;
    if (cfg.binarize_threshold == 0.0f) {
        r.selected_mask = r.all_levels.masks[static_cast<std::size_t>(r.selected_level)];
    } else {
        const auto up = upsample_bilinear(r.all_levels.logit_map(r.selected_level), r.all_levels.logit_size, r.mask_size);
        r.selected_mask.resize(up.size());
        std::transform(up.begin(), up.end(), r.selected_mask.begin(),
                       [&](float v) { return static_cast<std::uint8_t>(v > cfg.binarize_threshold); });
    }
    return r;
}

PredictionResult predict_refined_from_embedding(const SamModel& model, const ImageEmbedding& embedding,
                                                const InferenceConfig& cfg) {
    cfg.validate();
    auto r = predict_from_embedding(model, embedding, {}, cfg);
    for (int t = 0; t < cfg.refine_iters; ++t) {
        PromptSet next;
        next.mask_logits = mask_prompt_from(r.all_levels, r.selected_level, cfg.binarize_mask_prompt);
        const int used = r.iterations_used;
        r = predict_from_embedding(model, embedding, next, cfg);
        r.iterations_used = used + 1;
    }
    return r;
}

PredictionResult predict(const SamModel& model, const Tensor& canvas, const InferenceConfig& cfg) {
    return predict_with_prompts(model, canvas, {}, cfg);
}

PredictionResult predict_with_prompts(const SamModel& model, const Tensor& canvas, const PromptSet& prompts,
                                      const InferenceConfig& cfg) {
    prompts.validate(model.config());
    NoGradGuard guard;
    return predict_from_embedding(model, model.encode_image(canvas), prompts, cfg);
}

PredictionResult predict_refined(const SamModel& model, const Tensor& canvas, const InferenceConfig& cfg) {
    NoGradGuard guard;
    return predict_refined_from_embedding(model, model.encode_image(canvas), cfg);
}

}  // namespace samlp
