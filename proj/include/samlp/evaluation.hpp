#pragma once

// Mask-to-box conversion and detection metrics: IoU, greedy matching,
// precision/recall/F1 and all-points average precision.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "samlp/data.hpp"
#include "samlp/model.hpp"

namespace samlp {

struct Detection {
    Box box;  // original-image pixels
    float score = 0.0f;
    std::string image_id;
};

struct MatchResult {
    std::int64_t tp = 0, fp = 0, fn = 0;
    /// Aligned with the input detections.
    std::vector<bool> is_tp;
    double iou_threshold = 0.5;
};

struct PrfScores {
    double precision = 0.0, recall = 0.0, f1 = 0.0;
};

struct PrPoint {
    double recall = 0.0, precision = 0.0;
};

struct ImageResult {
    std::string image_id;
    std::vector<Detection> detections;
    std::vector<Box> gts;
    MatchResult match;
};

struct DetectionReport {
    double precision = 0.0, recall = 0.0, f1 = 0.0, ap = 0.0;
    std::vector<PrPoint> pr_curve;
    std::int64_t tp = 0, fp = 0, fn = 0;
    double iou_threshold = 0.5;
    std::int64_t n_images = 0;
    std::vector<ImageResult> per_image;
};

struct EvalConfig {
    double iou_threshold = 0.5;
    /// Components with fewer canvas pixels are ignored.
    std::int64_t min_area = 16;
    /// 0: plain None-prompt prediction; > 0: refinement passes.
    int refine_iters = 0;
    Split split = Split::test;
    /// Empty: no overlays.
    std::filesystem::path overlay_dir;
};

void to_json(nlohmann::json& j, const EvalConfig& c);
void from_json(const nlohmann::json& j, EvalConfig& c);

/// Tight half-open boxes of the 8-connected components of a 0/1 mask.
std::vector<Box> mask_to_boxes(const cv::Mat& mask, std::int64_t min_area = 16);

/// Components of a square canvas mask mapped back to original pixels, all
/// carrying `score`. Boxes that vanish after mapping are dropped.
std::vector<Detection> mask_to_detections(std::span<const std::uint8_t> canvas_mask, float score,
                                          const CanvasTransform& t, std::int64_t min_area = 16,
                                          const std::string& image_id = {});

double iou(const Box& a, const Box& b);

/// Greedy one-to-one matching in descending score order (stable for ties);
/// each detection takes the unmatched ground truth of highest IoU >= threshold.
MatchResult match(const std::vector<Detection>& dets, const std::vector<Box>& gts, double iou_threshold = 0.5);

/// 0/0 is taken as 0.
PrfScores precision_recall_f1(std::int64_t tp, std::int64_t fp, std::int64_t fn);
PrfScores precision_recall_f1(const MatchResult& m);

/// Harmonic mean; 0 when both inputs are 0.
double f1_score(double precision, double recall);

/// All-points interpolated AP over (score, is_tp) pairs pooled across images.
/// Detections with equal scores enter the curve together.
std::pair<double, std::vector<PrPoint>> average_precision(std::vector<std::pair<float, bool>> scored,
                                                          std::int64_t num_gts);

/// Per-image matching followed by pooled AP.
DetectionReport score_images(std::vector<ImageResult> images, double iou_threshold);

/// Maps a preprocessed canvas to (canvas mask, confidence).
using CanvasPredictor = std::function<std::pair<std::vector<std::uint8_t>, float>(const Tensor& canvas)>;

/// Runs `predictor` on every sample of `cfg.split`. Throws ValidationError on an empty split.
DetectionReport evaluate_with(const std::vector<Sample>& dataset, std::int64_t canvas, const CanvasPredictor& predictor,
                              const EvalConfig& cfg);
DetectionReport evaluate(const SamModel& model, const std::vector<Sample>& dataset, const EvalConfig& cfg);

/// {precision, recall, f1, ap, iou_threshold, n_images, tp, fp, fn}
nlohmann::json report_json(const DetectionReport& r);
void write_report(const std::filesystem::path& dir, const DetectionReport& r);

/// Ground truth in green, detections in red, one PNG per image.
void write_overlays(const std::filesystem::path& dir, const std::vector<Sample>& samples, const DetectionReport& r);

}  // namespace samlp
