#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "oracles.hpp"
#include "samlp/training.hpp"

using namespace samlp;
namespace fs = std::filesystem;

namespace {

std::vector<std::uint8_t> random_mask(std::size_t n, double density, std::mt19937_64& rng) {
    std::bernoulli_distribution b(density);
    std::vector<std::uint8_t> m(n);
    for (auto& v : m) v = b(rng);
    return m;
}

const std::vector<PreparedSample>& tiny_data() {
    static const auto d = prepare_samples(synthesize_dataset(4, 0), ModelConfig::preset(ScalePreset::tiny));
    return d;
}

std::vector<std::vector<float>> snapshot(const SamModel& m, const std::function<bool(const ParamRef&)>& keep) {
    std::vector<std::vector<float>> out;
    for (const auto& p : m.parameters())
        if (keep(p)) out.push_back(p.tensor.values());
    return out;
}

TrainConfig quick_config(std::int64_t steps) {
    TrainConfig c;
    c.max_steps = steps;
    c.epochs_stage1 = c.epochs_stage2 = 10;
    return c;
}

}  // namespace

TEST(DiceLoss, AnalyticGradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(0);
    std::uniform_real_distribution<float> u(0.01f, 0.99f);
    std::bernoulli_distribution coin(0.4);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor p({64});
        std::vector<float> g(64);
        for (auto& v : p.values()) v = u(rng);
        for (auto& v : g) v = coin(rng) ? 1.0f : 0.0f;
        p.set_requires_grad(true);
        dice_loss(p, g, 1.0f).backward();
        const auto numeric = oracle::dice_gradient({p.values().begin(), p.values().end()}, g, 1.0);
        for (std::size_t i = 0; i < numeric.size(); ++i)
            EXPECT_LE(std::fabs(p.grad()[i] - numeric[i]), 1e-4 * std::max(std::fabs(numeric[i]), 1e-3))
                << "trial " << trial << " element " << i;
    }
}

TEST(DiceLoss, ValueMatchesOracle) {
    Tensor p({4}, {0.9f, 0.1f, 0.8f, 0.3f});
    const std::vector<float> g{1, 0, 1, 0};
    EXPECT_NEAR(dice_loss(p, g, 1.0f).at(0), oracle::dice({0.9, 0.1, 0.8, 0.3}, g, 1.0), 1e-6);
    EXPECT_NEAR(dice_loss(Tensor({3}, {1, 1, 0}), std::vector<float>{1, 1, 0}, 1e-6f).at(0), 0.0, 1e-6);
    EXPECT_NEAR(dice_loss(Tensor({2}, {1, 0}), std::vector<float>{0, 1}, 1e-6f).at(0), 1.0, 1e-5);
    EXPECT_THROW(dice_loss(p, std::vector<float>{1, 0}, 1.0f), ShapeError);
}

TEST(DiceLoss, MultiMaskLossAveragesLevels) {
    MaskPrediction pred;
    pred.logit_size = 2;
    pred.logits = Tensor({3, 4}, {5, 5, -5, -5, -5, -5, 5, 5, 0, 0, 0, 0});
    const std::vector<float> g{1, 1, 0, 0};
    const auto probs = ops::sigmoid(pred.logits);
    double expect = 0.0;
    for (int l = 0; l < 3; ++l) {
        std::vector<double> p(4);
        for (int k = 0; k < 4; ++k) p[static_cast<std::size_t>(k)] = probs.at(l, k);
        expect += oracle::dice(p, g, 1.0) / 3.0;
    }
    EXPECT_NEAR(multi_mask_loss(pred, g).at(0), expect, 1e-6);
}

TEST(IouScoreLoss, TargetsAreHardIou) {
    MaskPrediction pred;
    pred.logit_size = 2;
    // Level 0 exact, level 1 half overlap, level 2 empty against empty-free gt.
    pred.logits = Tensor({3, 4}, {1, 1, -1, -1, 1, -1, 1, -1, -1, -1, -1, -1});
    pred.iou_scores = Tensor({3}, {1.0f, 0.0f, 0.5f});
    const std::vector<float> g{1, 1, 0, 0};
    // targets (1, 1/3, 0); squared errors (0, 1/9, 1/4)
    EXPECT_NEAR(iou_score_loss(pred, g).at(0), (1.0 / 9.0 + 0.25) / 3.0, 1e-6);
}

TEST(PolyLr, ScheduleShape) {
    TrainConfig c;
    EXPECT_FLOAT_EQ(lr_at(0, 100, c), c.base_lr);
    EXPECT_NEAR(lr_at(50, 100, c), c.base_lr * std::pow(0.5, 0.9), 1e-9);
    for (int i = 1; i < 100; ++i) EXPECT_LT(lr_at(i, 100, c), lr_at(i - 1, 100, c));
    EXPECT_GT(lr_at(99, 100, c), 0.0f);
    EXPECT_THROW(lr_at(100, 100, c), ValidationError);
    EXPECT_THROW(lr_at(0, 0, c), ValidationError);
}

TEST(CorrectionPoints, SoundOnThousandRandomPairs) {
    std::mt19937_64 rng(1), sampler(2);
    std::uniform_real_distribution<double> dens(0.0, 1.0);
    std::uniform_int_distribution<int> side(1, 24);
    int absent_pos = 0, absent_neg = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const int w = side(rng), h = side(rng);
        const auto n = static_cast<std::size_t>(w * h);
        // Some pairs are identical or empty so absent points get exercised.
        auto gt = random_mask(n, trial % 10 == 0 ? 0.0 : dens(rng), rng);
        auto pred = trial % 7 == 0 ? gt : random_mask(n, dens(rng), rng);
        const auto cp = sample_correction_points(pred, gt, w, sampler);
        bool any_fn = false, any_fp = false;
        for (std::size_t i = 0; i < n; ++i) {
            any_fn |= gt[i] && !pred[i];
            any_fp |= pred[i] && !gt[i];
        }
        ASSERT_EQ(cp.pos.has_value(), any_fn) << trial;
        ASSERT_EQ(cp.neg.has_value(), any_fp) << trial;
        if (cp.pos) {
            const auto i = static_cast<std::size_t>(cp.pos->y) * static_cast<std::size_t>(w) + static_cast<std::size_t>(cp.pos->x);
            ASSERT_TRUE(gt[i] && !pred[i]) << trial;
            ASSERT_EQ(cp.pos->label, PointLabel::foreground);
            ASSERT_LT(cp.pos->x, static_cast<float>(w));
        } else {
            ++absent_pos;
        }
        if (cp.neg) {
            const auto i = static_cast<std::size_t>(cp.neg->y) * static_cast<std::size_t>(w) + static_cast<std::size_t>(cp.neg->x);
            ASSERT_TRUE(pred[i] && !gt[i]) << trial;
            ASSERT_EQ(cp.neg->label, PointLabel::background);
        } else {
            ++absent_neg;
        }
    }
    EXPECT_GT(absent_pos, 0);
    EXPECT_GT(absent_neg, 0);
}

TEST(CorrectionPoints, CoversWholeRegion) {
    // FN region {1, 6}; both pixels must be reachable.
    const std::vector<std::uint8_t> gt{0, 1, 0, 0, 0, 0, 1, 0}, pred(8, 0);
    std::mt19937_64 rng(3);
    std::set<std::pair<float, float>> seen;
    for (int i = 0; i < 200; ++i) {
        const auto cp = sample_correction_points(pred, gt, 4, rng);
        seen.insert({cp.pos->x, cp.pos->y});
        EXPECT_FALSE(cp.neg.has_value());
    }
    EXPECT_EQ(seen, (std::set<std::pair<float, float>>{{1, 0}, {2, 1}}));
}

TEST(CorrectionPoints, RejectsShapeMismatch) {
    std::mt19937_64 rng(0);
    EXPECT_THROW(sample_correction_points(std::vector<std::uint8_t>(8), std::vector<std::uint8_t>(9), 4, rng), ShapeError);
    EXPECT_THROW(sample_correction_points(std::vector<std::uint8_t>(8), std::vector<std::uint8_t>(8), 3, rng), ShapeError);
}

TEST(HardDice, KnownValues) {
    EXPECT_DOUBLE_EQ(hard_dice(std::vector<std::uint8_t>{1, 1, 0, 0}, std::vector<std::uint8_t>{1, 0, 1, 0}), 0.5);
    EXPECT_DOUBLE_EQ(hard_dice(std::vector<std::uint8_t>{0, 0}, std::vector<std::uint8_t>{0, 0}), 1.0);
    EXPECT_DOUBLE_EQ(hard_dice(std::vector<std::uint8_t>{1, 0}, std::vector<std::uint8_t>{0, 0}), 0.0);
}

TEST(PrepareSamples, CanvasGroundTruthAlignsWithImage) {
    const auto& d = tiny_data();
    ASSERT_EQ(d.size(), 4u);
    for (const auto& s : d) {
        EXPECT_EQ(s.canvas.shape(), (Shape{3, 256, 256}));
        EXPECT_EQ(s.gt_canvas.size(), 256u * 256u);
        EXPECT_EQ(s.gt_logit.size(), 64u * 64u);
        // Nothing in the padding.
        for (std::int64_t y = s.transform.resized_h; y < 256; ++y)
            for (std::int64_t x = 0; x < 256; ++x) ASSERT_EQ(s.gt_canvas[static_cast<std::size_t>(y * 256 + x)], 0);
        EXPECT_GT(std::count(s.gt_canvas.begin(), s.gt_canvas.end(), 1), 0);
    }
}

TEST(TrainConfig, ValidationAndJson) {
    TrainConfig c;
    c.base_lr = 0.01f;
    c.per_iteration_loss = true;
    c.stage2_point_prompts = false;
    const auto back = nlohmann::json(c).get<TrainConfig>();
    EXPECT_EQ(back.base_lr, c.base_lr);
    EXPECT_TRUE(back.per_iteration_loss);
    EXPECT_FALSE(back.stage2_point_prompts);
    auto j = nlohmann::json(c);
    j["optimizer"] = "adam";
    EXPECT_THROW(j.get<TrainConfig>(), ValidationError);
    c.base_lr = 0.0f;
    EXPECT_THROW(c.validate(), ValidationError);
    c = TrainConfig{};
    c.stage2_point_prompts = c.stage2_mask_prompt = false;
    EXPECT_THROW(c.validate(), ValidationError);
}

TEST(Training, StageOneTouchesOnlyAdapters) {
    SamModel m(ModelConfig::preset(ScalePreset::tiny));
    inject(m, InjectionPlan{});
    auto is_base = [](const ParamRef& p) { return p.role == ParamRole::base; };
    auto is_lora = [](const ParamRef& p) { return p.role != ParamRole::base; };
    const auto base0 = snapshot(m, is_base), lora0 = snapshot(m, is_lora);
    const auto r = train_stage1(m, tiny_data(), quick_config(10));
    EXPECT_EQ(r.steps, 10);
    EXPECT_EQ(snapshot(m, is_base), base0);
    EXPECT_NE(snapshot(m, is_lora), lora0);
}

TEST(Training, StageTwoFreezesEncoderEntirely) {
    SamModel m(ModelConfig::preset(ScalePreset::tiny));
    inject(m, InjectionPlan{});
    auto frozen = [](const ParamRef& p) {
        return p.component == Component::image_encoder || (p.component == Component::mask_decoder && p.role == ParamRole::base);
    };
    auto trained = [](const ParamRef& p) {
        return p.component == Component::prompt_encoder || (p.component == Component::mask_decoder && p.role != ParamRole::base);
    };
    const auto frozen0 = snapshot(m, frozen), trained0 = snapshot(m, trained);
    train_stage2(m, tiny_data(), quick_config(10));
    EXPECT_EQ(snapshot(m, frozen), frozen0);
    EXPECT_NE(snapshot(m, trained), trained0);
}

TEST(Training, StepCountAndCallback) {
    SamModel m(ModelConfig::preset(ScalePreset::tiny));
    inject(m, InjectionPlan{});
    TrainConfig c;
    c.epochs_stage1 = 2;
    c.batch_size = 3;
    std::vector<double> lrs;
    const auto r = train_stage1(m, tiny_data(), c, [&](std::int64_t, double loss, double lr) {
        EXPECT_TRUE(std::isfinite(loss));
        lrs.push_back(lr);
    });
    // ceil(4 / 3) * 2
    EXPECT_EQ(r.steps, 4);
    ASSERT_EQ(lrs.size(), 4u);
    EXPECT_DOUBLE_EQ(lrs[0], c.base_lr);
    ASSERT_EQ(r.curve.size(), 2u);
    EXPECT_EQ(r.curve[0].epoch, 0);
    EXPECT_EQ(r.curve[1].epoch, 1);
}

TEST(Training, SameSeedSameResult) {
    auto run = [] {
        SamModel m(ModelConfig::preset(ScalePreset::tiny));
        inject(m, InjectionPlan{});
        auto r = train_stage1(m, tiny_data(), quick_config(6));
        return std::make_pair(snapshot(m, [](const ParamRef& p) { return p.role != ParamRole::base; }), r.curve);
    };
    const auto a = run(), b = run();
    EXPECT_EQ(a.first, b.first);
    ASSERT_EQ(a.second.size(), b.second.size());
    for (std::size_t i = 0; i < a.second.size(); ++i) EXPECT_EQ(a.second[i].mean_loss, b.second[i].mean_loss);
}

TEST(Training, NonFiniteInputAborts) {
    SamModel m(ModelConfig::preset(ScalePreset::tiny));
    inject(m, InjectionPlan{});
    auto data = tiny_data();
    data[0].canvas.values()[0] = std::nanf("");
    data.resize(1);
    EXPECT_THROW(train_stage1(m, data, quick_config(1)), NumericalError);
}

TEST(Training, RequiresAdapters) {
    SamModel m(ModelConfig::preset(ScalePreset::tiny));
    EXPECT_THROW(train_stage1(m, tiny_data(), quick_config(1)), ConfigError);
    EXPECT_THROW(train_stage2(m, tiny_data(), quick_config(1)), ConfigError);
}

TEST(Training, LossCsvFormat) {
    const auto path = fs::temp_directory_path() / "samlp_test_training_loss.csv";
    write_loss_csv(path, {{0, 0.5, 0.005}, {1, 0.25, 0.0025}});
    std::ifstream is(path);
    std::string all((std::istreambuf_iterator<char>(is)), {});
    EXPECT_EQ(all, "epoch,mean_loss,lr\n0,0.5,0.005\n1,0.25,0.0025\n");
    fs::remove(path);
}
