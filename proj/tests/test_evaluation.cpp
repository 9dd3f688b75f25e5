#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "oracles.hpp"
#include "samlp/evaluation.hpp"

using namespace samlp;
namespace fs = std::filesystem;

namespace {

std::vector<Box> sorted(std::vector<Box> b) {
    std::sort(b.begin(), b.end(), [](const Box& a, const Box& c) {
        return std::tie(a.y1, a.x1, a.y2, a.x2) < std::tie(c.y1, c.x1, c.y2, c.x2);
    });
    return b;
}

Detection det(float x1, float y1, float x2, float y2, float score) { return {{x1, y1, x2, y2}, score, {}}; }

}  // namespace

TEST(MaskToBoxes, MatchesFloodFillOracle) {
    std::mt19937_64 rng(0);
    std::bernoulli_distribution on(0.25);
    for (int trial = 0; trial < 50; ++trial) {
        cv::Mat m(24 + trial % 7, 31, CV_8UC1);
        for (int y = 0; y < m.rows; ++y)
            for (int x = 0; x < m.cols; ++x) m.at<std::uint8_t>(y, x) = on(rng);
        for (std::int64_t min_area : {1, 3}) EXPECT_EQ(sorted(mask_to_boxes(m, min_area)), sorted(oracle::components(m, min_area)));
    }
}

TEST(MaskToBoxes, DiagonalPixelsJoin) {
    cv::Mat m(4, 4, CV_8UC1, cv::Scalar(0));
    m.at<std::uint8_t>(0, 0) = m.at<std::uint8_t>(1, 1) = m.at<std::uint8_t>(2, 2) = 1;
    EXPECT_EQ(mask_to_boxes(m, 1), (std::vector<Box>{{0, 0, 3, 3}}));
    EXPECT_TRUE(mask_to_boxes(m, 4).empty());
    EXPECT_TRUE(mask_to_boxes(cv::Mat(4, 4, CV_8UC1, cv::Scalar(0)), 1).empty());
}

TEST(MaskToDetections, MapsBackToOriginalPixels) {
    const auto t = make_canvas_transform(512, 256, 256);
    std::vector<std::uint8_t> mask(256 * 256, 0);
    for (int y = 10; y < 30; ++y)
        for (int x = 40; x < 100; ++x) mask[static_cast<std::size_t>(y * 256 + x)] = 1;
    const auto d = mask_to_detections(mask, 0.7f, t, 16, "img");
    ASSERT_EQ(d.size(), 1u);
    EXPECT_EQ(d[0].box, (Box{80, 20, 200, 60}));
    EXPECT_EQ(d[0].score, 0.7f);
    EXPECT_EQ(d[0].image_id, "img");
    // A component entirely in the padding maps to nothing.
    std::vector<std::uint8_t> pad(256 * 256, 0);
    for (int y = 200; y < 220; ++y)
        for (int x = 10; x < 40; ++x) pad[static_cast<std::size_t>(y * 256 + x)] = 1;
    EXPECT_TRUE(mask_to_detections(pad, 0.5f, t).empty());
    EXPECT_THROW(mask_to_detections(std::vector<std::uint8_t>(10), 0.5f, t), ShapeError);
}

TEST(Iou, KnownValues) {
    EXPECT_DOUBLE_EQ(iou({0, 0, 10, 10}, {0, 0, 10, 10}), 1.0);
    EXPECT_DOUBLE_EQ(iou({0, 0, 10, 10}, {0, 0, 10, 20}), 0.5);
    EXPECT_DOUBLE_EQ(iou({0, 0, 10, 10}, {5, 5, 15, 15}), 25.0 / 175.0);
    EXPECT_DOUBLE_EQ(iou({0, 0, 10, 10}, {10, 0, 20, 10}), 0.0);
    EXPECT_DOUBLE_EQ(iou({0, 0, 0, 0}, {0, 0, 0, 0}), 0.0);
}

TEST(Match, GreedyByScoreWithThresholdInclusive) {
    const std::vector<Box> gts{{0, 0, 10, 10}, {20, 0, 30, 10}};
    const auto m = match({det(0, 0, 10, 10, 0.2f), det(0, 0, 10, 10, 0.9f), det(20, 0, 30, 20, 0.5f)}, gts, 0.5);
    EXPECT_EQ(m.tp, 2);
    EXPECT_EQ(m.fp, 1);
    EXPECT_EQ(m.fn, 0);
    // The higher-scored duplicate wins.
    EXPECT_EQ(m.is_tp, (std::vector<bool>{false, true, true}));
    EXPECT_EQ(match({det(20, 0, 30, 20, 0.5f)}, gts, 0.51).tp, 0);
}

TEST(Match, EqualIouGoesToLowestGroundTruthIndex) {
    // The detection straddles two ground truths with equal IoU.
    const std::vector<Box> gts{{0, 0, 10, 10}, {10, 0, 20, 10}};
    const auto m = match({det(5, 0, 15, 10, 0.9f), det(0, 0, 10, 10, 0.8f)}, gts, 0.3);
    EXPECT_EQ(m.is_tp, (std::vector<bool>{true, false}));
}

TEST(Prf, ZeroDivisionIsZero) {
    const auto s = precision_recall_f1(0, 0, 0);
    EXPECT_EQ(s.precision, 0.0);
    EXPECT_EQ(s.recall, 0.0);
    EXPECT_EQ(s.f1, 0.0);
    const auto t = precision_recall_f1(3, 1, 2);
    EXPECT_DOUBLE_EQ(t.precision, 0.75);
    EXPECT_DOUBLE_EQ(t.recall, 0.6);
    EXPECT_DOUBLE_EQ(t.f1, 2 * 0.75 * 0.6 / 1.35);
}

TEST(Prf, UfprTableOneF1) {
    // P = 95.3, R = 98.4 reported with F1 = 96.8.
    EXPECT_NEAR(100.0 * f1_score(0.953, 0.984), 96.8, 0.1);
}

TEST(AveragePrecision, MatchesThresholdSweepOracle) {
    std::mt19937_64 rng(42);
    std::uniform_int_distribution<int> count(0, 64), level(0, 12);
    std::bernoulli_distribution hit(0.6);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = count(rng);
        std::vector<std::pair<float, bool>> dets;
        std::int64_t tps = 0;
        // Coarse score levels force ties.
        for (int i = 0; i < n; ++i) {
            const bool tp = hit(rng);
            tps += tp;
            dets.emplace_back(static_cast<float>(level(rng)) / 12.0f, tp);
        }
        const std::int64_t num_gts = tps + std::uniform_int_distribution<int>(0, 5)(rng);
        EXPECT_NEAR(average_precision(dets, num_gts).first, oracle::average_precision(dets, num_gts), 1e-9) << "trial " << trial;
    }
}

TEST(AveragePrecision, TiesEnterTogether) {
    EXPECT_DOUBLE_EQ(average_precision({{0.9f, true}, {0.9f, false}}, 1).first, 0.5);
    EXPECT_DOUBLE_EQ(average_precision({{0.9f, false}, {0.9f, true}}, 1).first, 0.5);
    EXPECT_DOUBLE_EQ(average_precision({{0.9f, true}, {0.8f, false}}, 1).first, 1.0);
    EXPECT_DOUBLE_EQ(average_precision({}, 3).first, 0.0);
    EXPECT_DOUBLE_EQ(average_precision({{0.5f, false}}, 0).first, 0.0);
}

TEST(ScoreImages, HandScoredSixteenImageFixture) {
    const Box g{0, 0, 10, 10};
    std::vector<ImageResult> images(16);
    const float tp_scores[10] = {0.99f, 0.98f, 0.97f, 0.96f, 0.95f, 0.94f, 0.93f, 0.92f, 0.91f, 0.90f};
    for (int i = 0; i < 10; ++i) images[static_cast<std::size_t>(i)] = {"tp", {det(0, 0, 10, 10, tp_scores[i])}, {g}, {}};
    images[10] = {"low_iou", {det(5, 5, 15, 15, 0.935f)}, {g}, {}};
    images[11] = {"duplicate", {det(0, 0, 10, 10, 0.85f), det(0, 0, 10, 10, 0.84f)}, {g}, {}};
    images[12] = {"missed", {}, {g}, {}};
    images[13] = {"no_plate", {det(0, 0, 10, 10, 0.80f)}, {}, {}};
    images[14] = {"two_plates", {det(20, 0, 30, 10, 0.75f)}, {g, {20, 0, 30, 10}}, {}};
    images[15] = {"half_iou", {det(0, 0, 10, 20, 0.70f)}, {g}, {}};
    const auto r = score_images(images, 0.5);
    EXPECT_EQ(r.tp, 13);
    EXPECT_EQ(r.fp, 3);
    EXPECT_EQ(r.fn, 3);
    EXPECT_DOUBLE_EQ(r.precision, 13.0 / 16.0);
    EXPECT_DOUBLE_EQ(r.recall, 13.0 / 16.0);
    EXPECT_DOUBLE_EQ(r.f1, 13.0 / 16.0);
    // Envelope 1 over six hits, 11/12 over the next five, 13/16 over the last two.
    EXPECT_NEAR(r.ap, 293.0 / 384.0, 1e-12);
    EXPECT_EQ(r.n_images, 16);
    EXPECT_EQ(r.pr_curve.size(), 16u);
}

TEST(Evaluate, PerfectAndEmptyPredictors) {
    auto data = synthesize_dataset(6, 9);
    for (auto& s : data) s.split = Split::test;
    EvalConfig cfg;
    const auto gt_predictor = [&](const Tensor& canvas) {
        // Recover the sample by its canvas and return its rasterised boxes.
        for (const auto& s : data) {
            const auto pre = preprocess(s.image, 256);
            if (pre.canvas.values() != canvas.values()) continue;
            std::vector<std::uint8_t> m(256 * 256, 0);
            for (const auto& b : transform_boxes(s.gt_boxes, pre.transform))
                for (int y = static_cast<int>(std::lround(b.y1)); y < std::lround(b.y2); ++y)
                    for (int x = static_cast<int>(std::lround(b.x1)); x < std::lround(b.x2); ++x)
                        m[static_cast<std::size_t>(y * 256 + x)] = 1;
            return std::make_pair(m, 0.9f);
        }
        return std::make_pair(std::vector<std::uint8_t>(256 * 256, 0), 0.0f);
    };
    const auto perfect = evaluate_with(data, 256, gt_predictor, cfg);
    EXPECT_DOUBLE_EQ(perfect.f1, 1.0);
    EXPECT_DOUBLE_EQ(perfect.ap, 1.0);
    EXPECT_EQ(perfect.fp, 0);

    const auto none = evaluate_with(
        data, 256, [](const Tensor&) { return std::make_pair(std::vector<std::uint8_t>(256 * 256, 0), 0.5f); }, cfg);
    EXPECT_EQ(none.tp, 0);
    EXPECT_EQ(none.f1, 0.0);
    EXPECT_GT(none.fn, 0);

    cfg.split = Split::val;
    EXPECT_THROW(evaluate_with(data, 256, gt_predictor, cfg), ValidationError);
}

TEST(Report, JsonAndFiles) {
    const auto r = score_images({{"a", {det(0, 0, 10, 10, 0.9f)}, {{0, 0, 10, 10}}, {}}}, 0.5);
    const auto j = report_json(r);
    for (const char* k : {"precision", "recall", "f1", "ap", "iou_threshold", "n_images", "tp", "fp", "fn"})
        EXPECT_TRUE(j.contains(k)) << k;
    const auto dir = fs::temp_directory_path() / "samlp_test_eval_report";
    fs::remove_all(dir);
    write_report(dir, r);
    EXPECT_TRUE(fs::exists(dir / "report.json"));
    std::ifstream is(dir / "pr_curve.csv");
    std::string header;
    std::getline(is, header);
    EXPECT_EQ(header, "recall,precision");
    fs::remove_all(dir);
}

TEST(EvalConfig, JsonRoundTripAndValidation) {
    EvalConfig c;
    c.iou_threshold = 0.7;
    c.split = Split::val;
    c.refine_iters = 2;
    const auto back = nlohmann::json(c).get<EvalConfig>();
    EXPECT_EQ(back.iou_threshold, 0.7);
    EXPECT_EQ(back.split, Split::val);
    EXPECT_EQ(back.refine_iters, 2);
    auto j = nlohmann::json(c);
    j["refine_iters"] = -1;
    EXPECT_THROW(j.get<EvalConfig>(), ValidationError);
}
