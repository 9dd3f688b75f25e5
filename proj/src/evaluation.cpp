#include "samlp/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include <opencv2/imgproc.hpp>

#include "samlp/errors.hpp"
#include "samlp/inference.hpp"

namespace samlp {

void to_json(nlohmann::json& j, const EvalConfig& c) {
    j = {{"iou_threshold", c.iou_threshold},
         {"min_area", c.min_area},
         {"refine_iters", c.refine_iters},
         {"split", to_string(c.split)},
         {"overlay_dir", c.overlay_dir.string()}};
}

void from_json(const nlohmann::json& j, EvalConfig& c) {
    const EvalConfig d;
    c.iou_threshold = j.value("iou_threshold", d.iou_threshold);
    c.min_area = j.value("min_area", d.min_area);
    c.refine_iters = j.value("refine_iters", d.refine_iters);
    c.split = split_from_string(j.value("split", to_string(d.split)));
    c.overlay_dir = j.value("overlay_dir", std::string{});
    if (c.iou_threshold <= 0.0 || c.iou_threshold > 1.0) throw ValidationError("iou_threshold must lie in (0, 1]");
    if (c.min_area < 0 || c.refine_iters < 0) throw ValidationError("min_area and refine_iters must be >= 0");
}

std::vector<Box> mask_to_boxes(const cv::Mat& mask, std::int64_t min_area) {
    if (mask.empty()) return {};
    cv::Mat binary;
    cv::compare(mask, 0, binary, cv::CMP_NE);
    cv::Mat labels, stats, centroids;
    const int n = cv::connectedComponentsWithStats(binary, labels, stats, centroids, 8, CV_32S);
    std::vector<Box> boxes;
    for (int i = 1; i < n; ++i) {
        if (stats.at<int>(i, cv::CC_STAT_AREA) < min_area) continue;
        const float x = static_cast<float>(stats.at<int>(i, cv::CC_STAT_LEFT));
        const float y = static_cast<float>(stats.at<int>(i, cv::CC_STAT_TOP));
        boxes.push_back({x, y, x + static_cast<float>(stats.at<int>(i, cv::CC_STAT_WIDTH)),
                         y + static_cast<float>(stats.at<int>(i, cv::CC_STAT_HEIGHT))});
    }
    return boxes;
}

std::vector<Detection> mask_to_detections(std::span<const std::uint8_t> canvas_mask, float score, const CanvasTransform& t,
                                          std::int64_t min_area, const std::string& image_id) {
    const auto s = t.canvas;
    if (static_cast<std::int64_t>(canvas_mask.size()) != s * s)
        throw ShapeError("mask_to_detections: mask is not canvas-sized");
    const cv::Mat mask(static_cast<int>(s), static_cast<int>(s), CV_8UC1, const_cast<std::uint8_t*>(canvas_mask.data()));
    std::vector<Detection> out;
    for (const auto& b : untransform_boxes(mask_to_boxes(mask, min_area), t))
        if (b.area() > 0.0f) out.push_back({b, score, image_id});
    return out;
}

double iou(const Box& a, const Box& b) {
    const double iw = std::max(0.0, static_cast<double>(std::min(a.x2, b.x2)) - std::max(a.x1, b.x1));
    const double ih = std::max(0.0, static_cast<double>(std::min(a.y2, b.y2)) - std::max(a.y1, b.y1));
    const double inter = iw * ih;
    const double uni = static_cast<double>(a.area()) + b.area() - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

MatchResult match(const std::vector<Detection>& dets, const std::vector<Box>& gts, double iou_threshold) {
    MatchResult m;
    m.iou_threshold = iou_threshold;
    m.is_tp.assign(dets.size(), false);
    std::vector<std::size_t> order(dets.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
    std::vector<bool> taken(gts.size(), false);
    for (auto d : order) {
        double best = iou_threshold;
        std::ptrdiff_t best_gt = -1;
        for (std::size_t g = 0; g < gts.size(); ++g) {
            if (taken[g]) continue;
            const double v = iou(dets[d].box, gts[g]);
            if (v >= best && (best_gt < 0 || v > best)) {
                best = v;
                best_gt = static_cast<std::ptrdiff_t>(g);
            }
        }
        if (best_gt >= 0) {
            taken[static_cast<std::size_t>(best_gt)] = true;
            m.is_tp[d] = true;
            ++m.tp;
        } else {
            ++m.fp;
        }
    }
    m.fn = static_cast<std::int64_t>(gts.size()) - m.tp;
    return m;
}

PrfScores precision_recall_f1(std::int64_t tp, std::int64_t fp, std::int64_t fn) {
    PrfScores s;
    s.precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    s.recall = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    s.f1 = f1_score(s.precision, s.recall);
    return s;
}

double f1_score(double precision, double recall) {
    return precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

PrfScores precision_recall_f1(const MatchResult& m) { return precision_recall_f1(m.tp, m.fp, m.fn); }

std::pair<double, std::vector<PrPoint>> average_precision(std::vector<std::pair<float, bool>> scored, std::int64_t num_gts) {
    std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    // One curve point per distinct score: tied detections enter together.
    std::vector<PrPoint> curve;
    std::int64_t tp = 0;
    for (std::size_t k = 0; k < scored.size(); ++k) {
        tp += scored[k].second;
        if (k + 1 < scored.size() && scored[k + 1].first == scored[k].first) continue;
        curve.push_back({num_gts > 0 ? static_cast<double>(tp) / static_cast<double>(num_gts) : 0.0,
                         static_cast<double>(tp) / static_cast<double>(k + 1)});
    }
    if (num_gts <= 0) return {0.0, curve};
    // Precision envelope: running maximum from the right.
    std::vector<double> env(curve.size());
    double run = 0.0;
    for (std::size_t k = curve.size(); k-- > 0;) env[k] = run = std::max(run, curve[k].precision);
    double ap = 0.0, prev_recall = 0.0;
    for (std::size_t k = 0; k < curve.size(); ++k) {
        ap += (curve[k].recall - prev_recall) * env[k];
        prev_recall = curve[k].recall;
    }
    return {ap, curve};
}

DetectionReport score_images(std::vector<ImageResult> images, double iou_threshold) {
    DetectionReport r;
    r.iou_threshold = iou_threshold;
    r.n_images = static_cast<std::int64_t>(images.size());
    std::vector<std::pair<float, bool>> scored;
    std::int64_t num_gts = 0;
    for (auto& img : images) {
        img.match = match(img.detections, img.gts, iou_threshold);
        r.tp += img.match.tp;
        r.fp += img.match.fp;
        r.fn += img.match.fn;
        num_gts += static_cast<std::int64_t>(img.gts.size());
        for (std::size_t k = 0; k < img.detections.size(); ++k) scored.emplace_back(img.detections[k].score, img.match.is_tp[k]);
    }
    const auto prf = precision_recall_f1(r.tp, r.fp, r.fn);
    r.precision = prf.precision;
    r.recall = prf.recall;
    r.f1 = prf.f1;
    std::tie(r.ap, r.pr_curve) = average_precision(std::move(scored), num_gts);
    r.per_image = std::move(images);
    return r;
}

DetectionReport evaluate_with(const std::vector<Sample>& dataset, std::int64_t canvas, const CanvasPredictor& predictor,
                              const EvalConfig& cfg) {
    std::vector<ImageResult> images;
    for (const auto& s : dataset) {
        if (s.split != cfg.split) continue;
        const auto pre = preprocess(s.image, canvas);
        const auto [mask, score] = predictor(pre.canvas);
        images.push_back({s.source_id, mask_to_detections(mask, score, pre.transform, cfg.min_area, s.source_id), s.gt_boxes, {}});
    }
    if (images.empty()) throw ValidationError("evaluate: the " + to_string(cfg.split) + " split is empty");
    auto report = score_images(std::move(images), cfg.iou_threshold);
    if (!cfg.overlay_dir.empty()) write_overlays(cfg.overlay_dir, dataset, report);
    return report;
}

DetectionReport evaluate(const SamModel& model, const std::vector<Sample>& dataset, const EvalConfig& cfg) {
    InferenceConfig ic;
    ic.refine_iters = cfg.refine_iters;
    return evaluate_with(dataset, model.config().image_size,
                         [&](const Tensor& canvas) {
                             auto r = predict_refined(model, canvas, ic);
                             return std::make_pair(std::move(r.selected_mask), r.selected_score);
                         },
                         cfg);
}

nlohmann::json report_json(const DetectionReport& r) {
    return {{"precision", r.precision}, {"recall", r.recall}, {"f1", r.f1},      {"ap", r.ap},
            {"iou_threshold", r.iou_threshold}, {"n_images", r.n_images}, {"tp", r.tp}, {"fp", r.fp},
            {"fn", r.fn}};
}

void write_report(const std::filesystem::path& dir, const DetectionReport& r) {
    std::filesystem::create_directories(dir);
    {
        std::ofstream os(dir / "report.json");
        if (!os) throw std::runtime_error("cannot write report in '" + dir.string() + "'");
        os << report_json(r).dump(2) << '\n';
    }
    std::ofstream os(dir / "pr_curve.csv");
    os << "recall,precision\n";
    char line[64];
    for (const auto& p : r.pr_curve) {
        std::snprintf(line, sizeof(line), "%.9g,%.9g\n", p.recall, p.precision);
        os << line;
    }
}

void write_overlays(const std::filesystem::path& dir, const std::vector<Sample>& samples, const DetectionReport& r) {
    std::filesystem::create_directories(dir);
    for (const auto& img : r.per_image) {
        const auto it = std::find_if(samples.begin(), samples.end(), [&](const Sample& s) { return s.source_id == img.image_id; });
        if (it == samples.end()) continue;
        cv::Mat canvas = it->image.clone();
        auto rect = [](const Box& b) {
            return cv::Rect(cv::Point(static_cast<int>(std::lround(b.x1)), static_cast<int>(std::lround(b.y1))),
                            cv::Point(static_cast<int>(std::lround(b.x2)), static_cast<int>(std::lround(b.y2))));
        };
        for (const auto& g : img.gts) cv::rectangle(canvas, rect(g), cv::Scalar(0, 255, 0), 2);
        for (const auto& d : img.detections) cv::rectangle(canvas, rect(d.box), cv::Scalar(255, 0, 0), 1);
        auto name = std::filesystem::path(img.image_id).filename().replace_extension(".png");
        write_rgb(dir / name, canvas);
    }
}

}  // namespace samlp
