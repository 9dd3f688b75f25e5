#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "samlp/lora.hpp"

using namespace samlp;
namespace fs = std::filesystem;

namespace {

Tensor random_canvas(std::int64_t s, std::uint64_t seed) {
    Tensor t({3, s, s});
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> n(0.0f, 1.0f);
    for (auto& v : t.values()) v = n(rng);
    return t;
}

// Gives every B a nonzero value so adapters change the output.
void perturb_b(SamModel& m, std::uint64_t seed, float sd = 0.05f) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> n(0.0f, sd);
    m.visit_parameters([&](const std::string&, Tensor& t, Component, ParamRole role) {
        if (role == ParamRole::lora_b)
            for (auto& v : t.values()) v = n(rng);
    });
}

fs::path temp_file(const std::string& name) { return fs::temp_directory_path() / ("samlp_test_lora_" + name); }

float max_abs_diff(const std::vector<float>& a, const std::vector<float>& b) {
    float d = 0.0f;
    for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::fabs(a[i] - b[i]));
    return d;
}

}  // namespace

TEST(LoraParameterCount, VitbShapeRankFour) {
    SamModel m(ModelConfig::preset(ScalePreset::vitb_shape));
    inject(m, InjectionPlan{});
    // 12 blocks x (q, v) x 4 x (768 + 768)
    EXPECT_EQ(lora_parameter_count(m, Component::image_encoder), 147456);
    const auto dec = lora_parameter_count(m, Component::mask_decoder);
    EXPECT_NEAR(static_cast<double>(dec), 24576.0, 0.3 * 24576.0);
    EXPECT_EQ(dec, 23552);
    const auto total = trainable_parameter_count(m);
    EXPECT_EQ(total, 147456 + dec);
    EXPECT_NEAR(static_cast<double>(total) / 1e6, 0.17, 0.005);
}

TEST(LoraParameterCount, ScalesLinearlyWithRank) {
    SamModel m1(ModelConfig::preset(ScalePreset::tiny)), m8(ModelConfig::preset(ScalePreset::tiny));
    InjectionPlan p;
    p.rank = 1;
    inject(m1, p);
    p.rank = 8;
    inject(m8, p);
    for (auto c : {Component::image_encoder, Component::mask_decoder})
        EXPECT_EQ(lora_parameter_count(m8, c), 8 * lora_parameter_count(m1, c));
}

TEST(LoraInject, FreshAdaptersLeaveForwardUnchanged) {
    for (auto preset : {ScalePreset::tiny, ScalePreset::small}) {
        const SamModel plain(ModelConfig::preset(preset));
        auto injected = plain.clone();
        inject(injected, InjectionPlan{});
        const auto S = plain.config().image_size;
        for (std::uint64_t i = 0; i < 3; ++i) {
            const auto img = random_canvas(S, i);
            PromptSet p;
            p.points = {{static_cast<float>(S / 3), static_cast<float>(S / 2), PointLabel::foreground}};
            const auto a = plain.forward(img, p), b = injected.forward(img, p);
            EXPECT_LE(max_abs_diff(a.logits.values(), b.logits.values()), 1e-6f);
            EXPECT_LE(max_abs_diff(a.iou_scores.values(), b.iou_scores.values()), 1e-6f);
        }
    }
}

TEST(LoraInject, WrapsQueryAndValueOnly) {
    SamModel m(ModelConfig::preset(ScalePreset::tiny));
    InjectionPlan p;
    p.targets = {Component::mask_decoder};
    inject(m, p);
    for (auto& site : m.attention_sites(Component::mask_decoder)) {
        EXPECT_TRUE(site.attention->q_proj.lora.has_value());
        EXPECT_FALSE(site.attention->k_proj.lora.has_value());
        EXPECT_TRUE(site.attention->v_proj.lora.has_value());
        EXPECT_FALSE(site.attention->out_proj.lora.has_value());
    }
    for (auto& site : m.attention_sites(Component::image_encoder)) {
        EXPECT_FALSE(site.attention->q_proj.lora.has_value());
        EXPECT_FALSE(site.attention->v_proj.lora.has_value());
    }
    EXPECT_EQ(lora_parameter_count(m, Component::image_encoder), 0);
}

TEST(LoraInject, RejectsBadPlans) {
    SamModel m(ModelConfig::preset(ScalePreset::tiny));
    InjectionPlan p;
    p.targets.clear();
    EXPECT_THROW(inject(m, p), ValidationError);
    p.targets = {Component::prompt_encoder};
    EXPECT_THROW(inject(m, p), ValidationError);
    inject(m, InjectionPlan{});
    EXPECT_THROW(inject(m, InjectionPlan{}), ConfigError);
}

TEST(LoraStage, LoraStageTrainsExactlyTheAdapters) {
    SamModel m(ModelConfig::preset(ScalePreset::tiny));
    inject(m, InjectionPlan{});
    std::int64_t adapters = 0;
    for (const auto& p : m.parameters()) {
        EXPECT_EQ(p.tensor.requires_grad(), p.role != ParamRole::base) << p.path;
        if (p.role != ParamRole::base) adapters += p.tensor.size();
    }
    EXPECT_EQ(trainable_parameter_count(m), adapters);
    EXPECT_EQ(adapters,
              lora_parameter_count(m, Component::image_encoder) + lora_parameter_count(m, Component::mask_decoder));
}

TEST(LoraStage, PromptableStageTrainsPromptEncoderAndDecoderAdapters) {
    SamModel m(ModelConfig::preset(ScalePreset::tiny));
    inject(m, InjectionPlan{});
    set_stage_trainability(m, TrainingStage::promptable);
    for (const auto& p : m.parameters()) {
        const bool want = p.component == Component::prompt_encoder ||
                          (p.component == Component::mask_decoder && p.role != ParamRole::base);
        EXPECT_EQ(p.tensor.requires_grad(), want) << p.path;
    }
    set_stage_trainability(m, TrainingStage::promptable, true);
    for (const auto& p : m.parameters())
        EXPECT_EQ(p.tensor.requires_grad(), p.component == Component::mask_decoder && p.role != ParamRole::base) << p.path;
}

TEST(LoraStage, RequiresAdapters) {
    SamModel m(ModelConfig::preset(ScalePreset::tiny));
    EXPECT_THROW(set_stage_trainability(m, TrainingStage::lora), ConfigError);
}

TEST(LoraCheckpoint, RoundTripRestoresForward) {
    SamModel m(ModelConfig::preset(ScalePreset::tiny));
    inject(m, InjectionPlan{});
    perturb_b(m, 1);
    const auto path = temp_file("rt.samlp");
    const auto ck = save_adapter(m, TrainingStage::lora, path);
    for (const auto& a : ck.archive.arrays) EXPECT_NE(a.name.find("lora"), std::string::npos) << a.name;

    SamModel fresh(ModelConfig::preset(ScalePreset::tiny));
    const auto back = load_adapter(fresh, path);
    EXPECT_EQ(back.plan, ck.plan);
    EXPECT_EQ(back.stage, TrainingStage::lora);
    const auto img = random_canvas(256, 9);
    EXPECT_EQ(m.forward(img, {}).logits.values(), fresh.forward(img, {}).logits.values());
    fs::remove(path);
}

TEST(LoraCheckpoint, AdapterFileExcludesBaseWeights) {
    SamModel m(ModelConfig::preset(ScalePreset::tiny));
    inject(m, InjectionPlan{});
    const auto ck = save_adapter(m, TrainingStage::lora, temp_file("size.samlp"));
    std::int64_t stored = 0;
    for (const auto& a : ck.archive.arrays) stored += static_cast<std::int64_t>(a.data.size());
    EXPECT_EQ(stored, trainable_parameter_count(m));
    // Under a quarter of the float32 weight payload.
    EXPECT_LT(fs::file_size(temp_file("size.samlp")), static_cast<std::uintmax_t>(m.parameter_count()));
    fs::remove(temp_file("size.samlp"));
}

TEST(LoraCheckpoint, PromptableStageStoresPromptEncoder) {
    SamModel m(ModelConfig::preset(ScalePreset::tiny));
    inject(m, InjectionPlan{});
    m.prompt_encoder().no_mask_embed.values()[0] = 42.0f;
    const auto path = temp_file("stage2.samlp");
    const auto ck = save_adapter(m, TrainingStage::promptable, path);
    bool has_pe = false;
    for (const auto& a : ck.archive.arrays) has_pe |= a.name.rfind("prompt_encoder", 0) == 0;
    EXPECT_TRUE(has_pe);
    SamModel fresh(ModelConfig::preset(ScalePreset::tiny));
    load_adapter(fresh, path);
    EXPECT_EQ(fresh.prompt_encoder().no_mask_embed.values()[0], 42.0f);
    fs::remove(path);
}

TEST(LoraCheckpoint, ConfigHashMismatchIsRejected) {
    SamModel m(ModelConfig::preset(ScalePreset::tiny));
    inject(m, InjectionPlan{});
    const auto path = temp_file("hash.samlp");
    save_adapter(m, TrainingStage::lora, path);
    auto other_cfg = ModelConfig::preset(ScalePreset::tiny);
    other_cfg.init_seed = 7;
    SamModel other(other_cfg);
    EXPECT_THROW(load_adapter(other, path), ConfigError);
    fs::remove(path);
}

TEST(LoraCheckpoint, PlanMismatchIsRejected) {
    SamModel m(ModelConfig::preset(ScalePreset::tiny));
    inject(m, InjectionPlan{});
    const auto path = temp_file("plan.samlp");
    save_adapter(m, TrainingStage::lora, path);
    SamModel other(ModelConfig::preset(ScalePreset::tiny));
    InjectionPlan p;
    p.rank = 2;
    inject(other, p);
    EXPECT_THROW(load_adapter(other, path), ConfigError);
    fs::remove(path);
}

TEST(LoraMerge, MergedModelMatchesAdapterModel) {
    SamModel m(ModelConfig::preset(ScalePreset::tiny));
    inject(m, InjectionPlan{});
    perturb_b(m, 2, 0.01f);
    const auto merged = merge_adapters(m);
    EXPECT_FALSE(merged.injection().has_value());
    EXPECT_EQ(merged.parameter_count(), SamModel(ModelConfig::preset(ScalePreset::tiny)).parameter_count());
    for (std::uint64_t i = 0; i < 3; ++i) {
        const auto img = random_canvas(256, 20 + i);
        const auto a = m.forward(img, {}), b = merged.forward(img, {});
        double num = 0.0, den = 0.0;
        for (std::int64_t k = 0; k < a.logits.size(); ++k) {
            num = std::max(num, static_cast<double>(std::fabs(a.logits.at(k) - b.logits.at(k))));
            den = std::max(den, static_cast<double>(std::fabs(a.logits.at(k))));
        }
        EXPECT_LE(num / den, 1e-5);
    }
}

TEST(LoraMerge, MergeLeavesSourceUntouched) {
    SamModel m(ModelConfig::preset(ScalePreset::tiny));
    inject(m, InjectionPlan{});
    perturb_b(m, 3);
    const auto before = m.parameters();
    std::vector<std::vector<float>> values;
    for (const auto& p : before) values.push_back(p.tensor.values());
    merge_adapters(m);
    const auto after = m.parameters();
    ASSERT_EQ(after.size(), values.size());
    for (std::size_t i = 0; i < after.size(); ++i) EXPECT_EQ(after[i].tensor.values(), values[i]) << after[i].path;
    EXPECT_TRUE(m.injection().has_value());
}

TEST(LoraMerge, FullModelCheckpointRoundTrip) {
    SamModel m(ModelConfig::preset(ScalePreset::tiny));
    inject(m, InjectionPlan{});
    perturb_b(m, 4);
    const auto path = temp_file("model.samlp");
    save_model(merge_adapters(m), path);
    const auto back = load_model(path);
    EXPECT_FALSE(back.injection().has_value());
    const auto img = random_canvas(256, 30);
    EXPECT_EQ(back.forward(img, {}).logits.values(), merge_adapters(m).forward(img, {}).logits.values());
    EXPECT_THROW(load_adapter(m, path), ConfigError);
    fs::remove(path);
}
