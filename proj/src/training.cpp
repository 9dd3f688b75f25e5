#include "samlp/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include <opencv2/imgproc.hpp>

#include "samlp/errors.hpp"
#include "samlp/inference.hpp"

namespace samlp {

void TrainConfig::validate() const {
    auto positive = [](bool ok, const char* what) {
        if (!ok) throw ValidationError(std::string("train config: ") + what + " must be positive");
    };
    positive(base_lr > 0.0f && std::isfinite(base_lr), "base_lr");
    positive(batch_size > 0, "batch_size");
    positive(epochs_stage1 > 0, "epochs_stage1");
    positive(epochs_stage2 > 0, "epochs_stage2");
    positive(lr_power > 0.0f, "lr_power");
    positive(dice_smooth > 0.0f, "dice_smooth");
    if (num_inner_iters < 0) throw ValidationError("train config: num_inner_iters must be >= 0");
    if (max_steps < 0 || train_subset < 0) throw ValidationError("train config: max_steps/train_subset must be >= 0");
    if (aux_iou_weight < 0.0f) throw ValidationError("train config: aux_iou_weight must be >= 0");
    if (!stage2_point_prompts && !stage2_mask_prompt)
        throw ValidationError("train config: stage 2 needs point prompts, a mask prompt or both");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = {{"base_lr", c.base_lr},
         {"batch_size", c.batch_size},
         {"epochs_stage1", c.epochs_stage1},
         {"epochs_stage2", c.epochs_stage2},
         {"seed", c.seed},
         {"lr_power", c.lr_power},
         {"optimizer", "sgd"},
         {"num_inner_iters", c.num_inner_iters},
         {"dice_smooth", c.dice_smooth},
         {"aux_iou_loss", c.aux_iou_loss},
         {"aux_iou_weight", c.aux_iou_weight},
         {"per_iteration_loss", c.per_iteration_loss},
         {"freeze_prompt_encoder", c.freeze_prompt_encoder},
         {"binarize_mask_prompt", c.binarize_mask_prompt},
         {"stage2_point_prompts", c.stage2_point_prompts},
         {"stage2_mask_prompt", c.stage2_mask_prompt},
         {"max_steps", c.max_steps},
         {"train_subset", c.train_subset}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
    const TrainConfig d;
    c.base_lr = j.value("base_lr", d.base_lr);
    c.batch_size = j.value("batch_size", d.batch_size);
    c.epochs_stage1 = j.value("epochs_stage1", d.epochs_stage1);
    c.epochs_stage2 = j.value("epochs_stage2", d.epochs_stage2);
    c.seed = j.value("seed", d.seed);
    c.lr_power = j.value("lr_power", d.lr_power);
    if (j.value("optimizer", std::string("sgd")) != "sgd") throw ValidationError("train config: only optimizer 'sgd' exists");
    c.num_inner_iters = j.value("num_inner_iters", d.num_inner_iters);
    c.dice_smooth = j.value("dice_smooth", d.dice_smooth);
    c.aux_iou_loss = j.value("aux_iou_loss", d.aux_iou_loss);
    c.aux_iou_weight = j.value("aux_iou_weight", d.aux_iou_weight);
    c.per_iteration_loss = j.value("per_iteration_loss", d.per_iteration_loss);
    c.freeze_prompt_encoder = j.value("freeze_prompt_encoder", d.freeze_prompt_encoder);
    c.binarize_mask_prompt = j.value("binarize_mask_prompt", d.binarize_mask_prompt);
    c.stage2_point_prompts = j.value("stage2_point_prompts", d.stage2_point_prompts);
    c.stage2_mask_prompt = j.value("stage2_mask_prompt", d.stage2_mask_prompt);
    c.max_steps = j.value("max_steps", d.max_steps);
    c.train_subset = j.value("train_subset", d.train_subset);
}

Tensor dice_loss(const Tensor& prob, std::span<const float> gt, float eps) {
    if (static_cast<std::size_t>(prob.size()) != gt.size())
        throw ShapeError("dice_loss: prediction has " + std::to_string(prob.size()) + " elements, target has " +
                         std::to_string(gt.size()));
    const auto& p = prob.values();
    double inter = 0.0, sp = 0.0, sg = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        inter += static_cast<double>(p[i]) * gt[i];
        sp += p[i];
        sg += gt[i];
    }
    const double num = 2.0 * inter + eps, den = sp + sg + eps;
    std::vector<float> target(gt.begin(), gt.end());
    return make_result({1}, {static_cast<float>(1.0 - num / den)}, {prob},
                       [num, den, target = std::move(target)](Node& n) {
                           auto& parent = *n.parents[0];
                           if (parent.grad.empty()) parent.grad.assign(parent.data.size(), 0.0f);
                           const double g = n.grad[0];
                           const double den2 = den * den;
                           for (std::size_t i = 0; i < target.size(); ++i)
                               parent.grad[i] += static_cast<float>(-g * (2.0 * target[i] * den - num) / den2);
                       });
}

Tensor multi_mask_loss(const MaskPrediction& pred, std::span<const float> gt, float eps) {
    const auto probs = ops::sigmoid(pred.logits);
    Tensor total;
    for (int i = 0; i < kNumMaskOutputs; ++i) {
        auto l = dice_loss(ops::slice_rows(probs, i, i + 1), gt, eps);
        total = i == 0 ? l : ops::add(total, l);
    }
    return ops::scale(total, 1.0f / static_cast<float>(kNumMaskOutputs));
}

Tensor iou_score_loss(const MaskPrediction& pred, std::span<const float> gt) {
    const auto m2 = static_cast<std::size_t>(pred.logit_size * pred.logit_size);
    if (gt.size() != m2) throw ShapeError("iou_score_loss: target size does not match the logit map");
    std::vector<float> target(kNumMaskOutputs);
    for (int i = 0; i < kNumMaskOutputs; ++i) {
        const auto logits = pred.logit_map(i);
        double inter = 0.0, uni = 0.0;
        for (std::size_t k = 0; k < m2; ++k) {
            const bool p = logits[k] > 0.0f, g = gt[k] > 0.5f;
            inter += p && g;
            uni += p || g;
        }
        target[static_cast<std::size_t>(i)] = uni > 0.0 ? static_cast<float>(inter / uni) : 1.0f;
    }
    const auto diff = ops::sub(pred.iou_scores, Tensor({kNumMaskOutputs}, target));
    return ops::mean(ops::mul(diff, diff));
}

float lr_at(std::int64_t iter, std::int64_t total_iters, const TrainConfig& cfg) {
    if (total_iters <= 0 || iter < 0 || iter >= total_iters) throw ValidationError("lr_at: iteration out of range");
    const double frac = 1.0 - static_cast<double>(iter) / static_cast<double>(total_iters);
    return static_cast<float>(cfg.base_lr * std::pow(frac, static_cast<double>(cfg.lr_power)));
}

namespace {

std::optional<PromptPoint> draw_from(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b, bool want_a,
                                     std::int64_t width, PointLabel label, std::mt19937_64& rng) {
    std::vector<std::int64_t> region;
    for (std::size_t i = 0; i < a.size(); ++i)
        if ((a[i] != 0) == want_a && (b[i] != 0) != want_a) region.push_back(static_cast<std::int64_t>(i));
    if (region.empty()) return std::nullopt;
    std::uniform_int_distribution<std::size_t> pick(0, region.size() - 1);
    const auto idx = region[pick(rng)];
    return PromptPoint{static_cast<float>(idx % width), static_cast<float>(idx / width), label};
}

}  // namespace

CorrectionPoints sample_correction_points(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt,
                                          std::int64_t width, std::mt19937_64& rng) {
    if (pred.size() != gt.size()) throw ShapeError("sample_correction_points: mask sizes differ");
    if (width <= 0 || pred.size() % static_cast<std::size_t>(width) != 0)
        throw ShapeError("sample_correction_points: width does not divide the mask size");
    CorrectionPoints out;
    // FN: gt set, pred clear.
    out.pos = draw_from(gt, pred, true, width, PointLabel::foreground, rng);
    // FP: pred set, gt clear.
    out.neg = draw_from(pred, gt, true, width, PointLabel::background, rng);
    return out;
}

std::vector<PreparedSample> prepare_samples(const std::vector<Sample>& samples, const ModelConfig& cfg,
                                            const Normalization& norm) {
    const auto s = cfg.image_size;
    std::vector<PreparedSample> out;
    out.reserve(samples.size());
    for (const auto& sample : samples) {
        PreparedSample p;
        auto pre = preprocess(sample.image, s, norm);
        p.canvas = pre.canvas;
        p.transform = pre.transform;
        p.source_id = sample.source_id;

        cv::Mat canvas_gt = cv::Mat::zeros(static_cast<int>(s), static_cast<int>(s), CV_8UC1);
        cv::Mat resized;
        cv::resize(sample.gt_mask, resized,
                   cv::Size(static_cast<int>(p.transform.resized_w), static_cast<int>(p.transform.resized_h)), 0, 0,
                   cv::INTER_NEAREST);
        resized.copyTo(canvas_gt(cv::Rect(0, 0, resized.cols, resized.rows)));
        p.gt_canvas.assign(canvas_gt.data, canvas_gt.data + canvas_gt.total());
        p.gt_logit = downsample_mask(canvas_gt, cfg.mask_prompt_size);
        out.push_back(std::move(p));
    }
    return out;
}

double hard_dice(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt) {
    if (pred.size() != gt.size()) throw ShapeError("hard_dice: mask sizes differ");
    std::int64_t inter = 0, sp = 0, sg = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred[i] != 0, g = gt[i] != 0;
        inter += p && g;
        sp += p;
        sg += g;
    }
    return sp + sg == 0 ? 1.0 : 2.0 * static_cast<double>(inter) / static_cast<double>(sp + sg);
}

double dataset_dice(const SamModel& model, const std::vector<PreparedSample>& data, int refine_iters) {
    if (data.empty()) return 0.0;
    InferenceConfig ic;
    ic.refine_iters = refine_iters;
    double total = 0.0;
    for (const auto& s : data) total += hard_dice(predict_refined(model, s.canvas, ic).selected_mask, s.gt_canvas);
    return total / static_cast<double>(data.size());
}

void write_loss_csv(const std::filesystem::path& path, const std::vector<LossRecord>& curve) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write '" + path.string() + "'");
    os << "epoch,mean_loss,lr\n";
    char line[96];
    for (const auto& r : curve) {
        std::snprintf(line, sizeof(line), "%d,%.9g,%.9g\n", r.epoch, r.mean_loss, r.lr);
        os << line;
    }
}

namespace {

/// Loss of one sample; builds the graph for backward().
using SampleLoss = std::function<Tensor(std::size_t, std::mt19937_64&)>;

double grad_norm(SamModel& model) {
    double sq = 0.0;
    model.visit_parameters([&](const std::string&, Tensor& t, Component, ParamRole) {
        for (float g : t.grad()) sq += static_cast<double>(g) * g;
    });
    return std::sqrt(sq);
}

void sgd_step(SamModel& model, float lr, float grad_scale) {
    model.visit_parameters([&](const std::string&, Tensor& t, Component, ParamRole) {
        if (!t.requires_grad() || t.grad().empty()) return;
        auto& v = t.values();
        const auto g = t.grad();
        for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr * grad_scale * g[i];
        t.zero_grad();
    });
}

TrainResult run_training(SamModel& model, std::size_t n, int epochs, const TrainConfig& cfg, const SampleLoss& loss_of,
                         const StepCallback& on_step) {
    const auto batch = static_cast<std::size_t>(cfg.batch_size);
    const auto steps_per_epoch = static_cast<std::int64_t>((n + batch - 1) / batch);
    std::int64_t total = steps_per_epoch * epochs;
    if (cfg.max_steps > 0) total = std::min(total, cfg.max_steps);

    std::mt19937_64 rng(cfg.seed);
    std::vector<std::size_t> order(n);
    TrainResult result;
    double epoch_loss = 0.0, last_grad_norm = 0.0;
    std::int64_t epoch_count = 0;
    float epoch_lr = 0.0f;

    for (std::int64_t step = 0; step < total; ++step) {
        const auto in_epoch = step % steps_per_epoch;
        if (in_epoch == 0) {
            std::iota(order.begin(), order.end(), std::size_t{0});
            for (std::size_t i = n; i > 1; --i) {
                std::uniform_int_distribution<std::size_t> pick(0, i - 1);
                std::swap(order[i - 1], order[pick(rng)]);
            }
            epoch_loss = 0.0;
            epoch_count = 0;
            epoch_lr = lr_at(step, total, cfg);
        }
        const float lr = lr_at(step, total, cfg);
        const auto begin = static_cast<std::size_t>(in_epoch) * batch;
        const auto end = std::min(n, begin + batch);
        double step_loss = 0.0;
        for (auto k = begin; k < end; ++k) {
            auto loss = loss_of(order[k], rng);
            const float v = loss.item();
            if (!std::isfinite(v)) {
                char msg[192];
                std::snprintf(msg, sizeof(msg), "non-finite loss at step %lld (lr %.6g, last grad norm %.6g)",
                              static_cast<long long>(step), static_cast<double>(lr), last_grad_norm);
                throw NumericalError(msg);
            }
            loss.backward();
            step_loss += v;
        }
        const auto count = static_cast<float>(end - begin);
        last_grad_norm = grad_norm(model) / count;
        if (!std::isfinite(last_grad_norm)) throw NumericalError("non-finite gradient at step " + std::to_string(step));
        sgd_step(model, lr, 1.0f / count);

        step_loss /= count;
        epoch_loss += step_loss;
        ++epoch_count;
        ++result.steps;
        if (on_step) on_step(step, step_loss, lr);
        if (in_epoch == steps_per_epoch - 1 || step == total - 1)
            result.curve.push_back({static_cast<int>(step / steps_per_epoch), epoch_loss / static_cast<double>(epoch_count),
                                    epoch_lr});
    }
    return result;
}

std::vector<PreparedSample> subset(const std::vector<PreparedSample>& data, const TrainConfig& cfg) {
    if (data.empty()) throw ValidationError("training set is empty");
    if (cfg.train_subset == 0 || static_cast<std::size_t>(cfg.train_subset) >= data.size()) return data;
    return {data.begin(), data.begin() + cfg.train_subset};
}

Tensor supervised_loss(const MaskPrediction& pred, const PreparedSample& s, const TrainConfig& cfg) {
    auto loss = multi_mask_loss(pred, s.gt_logit, cfg.dice_smooth);
    if (cfg.aux_iou_loss && cfg.aux_iou_weight > 0.0f)
        loss = ops::add(loss, ops::scale(iou_score_loss(pred, s.gt_logit), cfg.aux_iou_weight));
    return loss;
}

}  // namespace

TrainResult train_stage1(SamModel& model, const std::vector<PreparedSample>& data, const TrainConfig& cfg,
                         const StepCallback& on_step) {
    cfg.validate();
    if (!model.injection()) throw ConfigError("train_stage1: model has no adapters");
    set_stage_trainability(model, TrainingStage::lora);
    const auto train = subset(data, cfg);
    auto loss_of = [&](std::size_t i, std::mt19937_64&) {
        return supervised_loss(model.forward(train[i].canvas, {}), train[i], cfg);
    };
    auto result = run_training(model, train.size(), cfg.epochs_stage1, cfg, loss_of, on_step);
    result.final_dice = dataset_dice(model, train, 0);
    return result;
}

TrainResult train_stage2(SamModel& model, const std::vector<PreparedSample>& data, const TrainConfig& cfg,
                         const StepCallback& on_step) {
    cfg.validate();
    if (!model.injection()) throw ConfigError("train_stage2: model has no adapters");
    set_stage_trainability(model, TrainingStage::promptable, cfg.freeze_prompt_encoder);
    const auto train = subset(data, cfg);

    // The encoder (base and adapters) is frozen throughout, so embeddings are fixed.
    std::vector<ImageEmbedding> embeddings;
    {
        NoGradGuard guard;
        for (const auto& s : train) embeddings.push_back(model.encode_image(s.canvas));
    }
    const auto width = model.config().image_size;

    auto loss_of = [&](std::size_t i, std::mt19937_64& rng) {
        const auto& s = train[i];
        PromptSet prompt;
        Tensor total;
        int supervised = 0;
        for (int t = 0; t <= cfg.num_inner_iters; ++t) {
            const bool last = t == cfg.num_inner_iters;
            const bool supervise = last || cfg.per_iteration_loss;
            std::optional<NoGradGuard> guard;
            if (!supervise) guard.emplace();
            const auto pred = model.decode_masks(embeddings[i], model.encode_prompts(prompt));
            if (supervise) {
                auto l = supervised_loss(pred, s, cfg);
                total = supervised == 0 ? l : ops::add(total, l);
                ++supervised;
            }
            if (last) break;
            const int idx = select_level(pred.iou_scores);
            PromptSet next;
            if (cfg.stage2_mask_prompt) next.mask_logits = mask_prompt_from(pred, idx, cfg.binarize_mask_prompt);
            if (cfg.stage2_point_prompts) {
                const auto cp = sample_correction_points(pred.masks[static_cast<std::size_t>(idx)], s.gt_canvas, width, rng);
                if (cp.pos) next.points.push_back(*cp.pos);
                if (cp.neg) next.points.push_back(*cp.neg);
            }
            prompt = std::move(next);
        }
        return supervised == 1 ? total : ops::scale(total, 1.0f / static_cast<float>(supervised));
    };
    auto result = run_training(model, train.size(), cfg.epochs_stage2, cfg, loss_of, on_step);
    result.final_dice = dataset_dice(model, train, cfg.num_inner_iters);
    return result;
}

}  // namespace samlp
