#include <gtest/gtest.h>

#include <random>

#include "samlp/inference.hpp"

using namespace samlp;

namespace {

Tensor random_canvas(std::int64_t s, std::uint64_t seed) {
    Tensor t({3, s, s});
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> n(0.0f, 1.0f);
    for (auto& v : t.values()) v = n(rng);
    return t;
}

const SamModel& model() {
    static const SamModel m(ModelConfig::preset(ScalePreset::tiny));
    return m;
}

InferenceConfig refine(int n) {
    InferenceConfig c;
    c.refine_iters = n;
    return c;
}

}  // namespace

TEST(SelectLevel, HighestScoreLowestIndexOnTies) {
    EXPECT_EQ(select_level(Tensor({3}, {0.1f, 0.7f, 0.3f})), 1);
    EXPECT_EQ(select_level(Tensor({3}, {0.5f, 0.5f, 0.5f})), 0);
    EXPECT_EQ(select_level(Tensor({3}, {0.2f, 0.9f, 0.9f})), 1);
}

TEST(MaskPrompt, RawAndBinarised) {
    MaskPrediction p;
    p.logit_size = 2;
    p.logits = Tensor({3, 4}, {0, 0, 0, 0, 1.5f, -0.5f, 0.0f, 3.0f, 0, 0, 0, 0});
    const auto raw = mask_prompt_from(p, 1, false);
    EXPECT_EQ(raw.shape(), (Shape{2, 2}));
    EXPECT_EQ(raw.values(), (std::vector<float>{1.5f, -0.5f, 0.0f, 3.0f}));
    EXPECT_EQ(mask_prompt_from(p, 1, true).values(), (std::vector<float>{20, -20, -20, 20}));
}

TEST(Predict, SelectsMaskOfBestLevel) {
    const auto r = predict(model(), random_canvas(256, 0), refine(0));
    EXPECT_EQ(r.iterations_used, 1);
    EXPECT_EQ(r.mask_size, 256);
    EXPECT_EQ(r.selected_level, select_level(r.all_levels.iou_scores));
    EXPECT_EQ(r.selected_score, r.all_levels.iou_scores.at(r.selected_level));
    EXPECT_EQ(r.selected_mask, r.all_levels.masks[static_cast<std::size_t>(r.selected_level)]);
}

TEST(Predict, ZeroRefinementIsBitIdenticalToPlainPrediction) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const auto img = random_canvas(256, seed);
        const auto a = predict(model(), img), b = predict_refined(model(), img, refine(0));
        EXPECT_EQ(a.all_levels.logits.values(), b.all_levels.logits.values());
        EXPECT_EQ(a.all_levels.iou_scores.values(), b.all_levels.iou_scores.values());
        EXPECT_EQ(a.selected_mask, b.selected_mask);
        EXPECT_EQ(b.iterations_used, 1);
    }
}

TEST(Predict, RefinementFeedsSelectedLogitsBack) {
    const auto img = random_canvas(256, 4);
    const auto first = predict(model(), img);
    PromptSet p;
    p.mask_logits = first.all_levels.logit_tensor(first.selected_level);
    const auto manual = predict_with_prompts(model(), img, p);
    const auto refined = predict_refined(model(), img, refine(1));
    EXPECT_EQ(refined.iterations_used, 2);
    EXPECT_EQ(refined.all_levels.logits.values(), manual.all_levels.logits.values());
    EXPECT_EQ(refined.selected_mask, manual.selected_mask);
}

TEST(Predict, ForwardCountIsRefinementPlusOne) {
    SamModel m(ModelConfig::preset(ScalePreset::tiny));
    for (int n : {0, 1, 3}) {
        const auto before = m.forward_calls();
        const auto r = predict_refined(m, random_canvas(256, 5), refine(n));
        EXPECT_EQ(m.forward_calls() - before, static_cast<std::uint64_t>(n + 1));
        EXPECT_EQ(r.iterations_used, n + 1);
    }
}

TEST(Predict, BinariseThresholdAppliesToUpsampledLogits) {
    auto c = refine(0);
    c.binarize_threshold = 0.25f;
    const auto r = predict(model(), random_canvas(256, 6), c);
    const auto up = upsample_bilinear(r.all_levels.logit_map(r.selected_level), 64, 256);
    for (std::size_t i = 0; i < up.size(); ++i) ASSERT_EQ(r.selected_mask[i], up[i] > 0.25f);
}

TEST(Predict, PromptsAreValidated) {
    PromptSet p;
    p.points = {{300, 10, PointLabel::foreground}};
    EXPECT_THROW(predict_with_prompts(model(), random_canvas(256, 7), p), ValidationError);
    EXPECT_THROW(predict_refined(model(), random_canvas(256, 7), refine(-1)), ValidationError);
}

TEST(Predict, EmbeddingPathMatchesImagePath) {
    const auto img = random_canvas(256, 8);
    const auto e = model().encode_image(img);
    EXPECT_EQ(predict_refined_from_embedding(model(), e, refine(2)).selected_mask,
              predict_refined(model(), img, refine(2)).selected_mask);
}
