// samlp command-line entry point.
// Exit codes: 0 success, 2 invalid input or configuration, 3 runtime or numerical failure.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <opencv2/imgcodecs.hpp>

#include "CLI11.hpp"
#include "json.hpp"
#include "samlp/archive.hpp"
#include "samlp/config.hpp"
#include "samlp/errors.hpp"
#include "samlp/evaluation.hpp"
#include "samlp/inference.hpp"
#include "samlp/lora.hpp"
#include "samlp/training.hpp"

namespace fs = std::filesystem;
using namespace samlp;

namespace {

// Flags left unset do not override the config file.
struct Flags {
    std::string config;
    std::optional<std::string> preset, inject, format, data, out, split, base;
    std::optional<std::int64_t> rank, steps, n, subset;
    std::optional<int> epochs, refine, batch;
    std::optional<float> lr, sigma;
    std::optional<double> iou_thresh;
    std::optional<std::uint64_t> seed;
};

std::set<Component> parse_targets(const std::string& s) {
    if (s == "both" || s == "encoder+decoder") return {Component::image_encoder, Component::mask_decoder};
    if (s == "encoder") return {Component::image_encoder};
    if (s == "decoder") return {Component::mask_decoder};
    throw ValidationError("--inject must be encoder, decoder or both, got '" + s + "'");
}

std::string targets_name(const std::set<Component>& t) {
    if (t.size() == 2) return "both";
    return t.count(Component::image_encoder) ? "encoder" : "decoder";
}

RunConfig resolve(const Flags& f) {
    RunConfig c = f.config.empty() ? RunConfig{} : load_run_config(f.config);
    if (f.preset) c.preset = preset_from_string(*f.preset);
    if (f.inject) c.injection.targets = parse_targets(*f.inject);
    if (f.rank) c.injection.rank = *f.rank;
    if (f.sigma) c.injection.init_sigma = *f.sigma;
    if (f.epochs) c.train.epochs_stage1 = c.train.epochs_stage2 = *f.epochs;
    if (f.lr) c.train.base_lr = *f.lr;
    if (f.batch) c.train.batch_size = *f.batch;
    if (f.steps) c.train.max_steps = *f.steps;
    if (f.subset) c.train.train_subset = *f.subset;
    if (f.seed) {
        c.train.seed = *f.seed;
        c.injection.seed = *f.seed;
    }
    if (f.refine) c.inference.refine_iters = c.eval.refine_iters = *f.refine;
    if (f.iou_thresh) c.eval.iou_threshold = *f.iou_thresh;
    if (f.split) c.eval.split = split_from_string(*f.split);
    if (f.format) c.dataset.format = *f.format;
    if (f.data) c.dataset.root = *f.data;
    if (f.n) c.dataset.synth_n = *f.n;
    if (f.out) c.out = *f.out;
    if (f.base) c.base = *f.base;

    if (c.dataset.format != "synth") {
        format_from_string(c.dataset.format);
        if (c.dataset.root.empty()) throw ValidationError("--data is required for format '" + c.dataset.format + "'");
    }
    if (c.injection.rank < 1) throw ValidationError("--rank must be >= 1");
    if (c.eval.iou_threshold <= 0.0 || c.eval.iou_threshold > 1.0) throw ValidationError("--iou-thresh must lie in (0, 1]");
    c.train.validate();
    c.inference.validate();
    c.model();
    return c;
}

void add_common(CLI::App* app, Flags& f) {
    app->add_option("--config", f.config, "JSON run configuration")->check(CLI::ExistingFile);
    app->add_option("--preset", f.preset, "tiny | small | vitb_shape");
    app->add_option("--format", f.format, "synth | generic_json | ufpr | ccpd");
    app->add_option("--data", f.data, "dataset root (or annotations.json for generic_json)");
    app->add_option("--n", f.n, "number of synthetic images");
    app->add_option("--out", f.out, "output directory");
    app->add_option("--seed", f.seed, "seed for shuffling, adapter init and point sampling");
    app->add_option("--base", f.base, "full-weight base checkpoint replacing the seeded weights");
}

void add_train(CLI::App* app, Flags& f) {
    app->add_option("--rank", f.rank, "adapter rank");
    app->add_option("--inject", f.inject, "encoder | decoder | both");
    app->add_option("--sigma", f.sigma, "standard deviation of the A initialisation");
    app->add_option("--epochs", f.epochs, "training epochs");
    app->add_option("--lr", f.lr, "base learning rate");
    app->add_option("--batch", f.batch, "batch size");
    app->add_option("--steps", f.steps, "cap on optimizer steps");
    app->add_option("--subset", f.subset, "train on the first k training images only");
}

void add_eval(CLI::App* app, Flags& f) {
    app->add_option("--refine", f.refine, "refinement passes after the None-prompt pass");
    app->add_option("--iou-thresh", f.iou_thresh, "IoU threshold for a true positive");
    app->add_option("--split", f.split, "train | val | test");
}

std::vector<Sample> training_split(const RunConfig& c) {
    auto train = filter_split(load_samples(c.dataset), Split::train);
    if (train.empty()) throw ValidationError("dataset has no training images");
    return train;
}

void write_json(const fs::path& p, const nlohmann::json& j) {
    std::ofstream os(p);
    if (!os) throw std::runtime_error("cannot write '" + p.string() + "'");
    os << j.dump(2) << '\n';
}

StepCallback progress(std::int64_t every) {
    return [every](std::int64_t step, double loss, double lr) {
        if (step % every == 0) std::fprintf(stderr, "step %lld loss %.5f lr %.3g\n", static_cast<long long>(step), loss, lr);
    };
}

// Loads either a merged full-weight model or base + adapter.
SamModel load_predictor(const RunConfig& c, const std::string& adapter, const std::string& model_path) {
    if (!model_path.empty()) return load_model(model_path);
    if (adapter.empty()) throw ValidationError("pass --adapter or --model");
    auto m = c.base_model();
    load_adapter(m, adapter);
    return m;
}

int cmd_synth(const Flags& f, const SynthConfig& sc, std::int64_t test_n) {
    auto c = resolve(f);
    auto samples = synthesize_dataset(c.dataset.synth_n, c.dataset.synth_seed ^ c.train.seed, sc);
    if (test_n > 0) {
        auto tc = sc;
        tc.split = Split::test;
        auto test = synthesize_dataset(test_n, (c.dataset.synth_seed ^ c.train.seed) ^ 0x5eed7e57ULL, tc);
        samples.insert(samples.end(), test.begin(), test.end());
    }
    write_generic_json(c.out, samples);
    std::printf("wrote %zu images to %s\n", samples.size(), c.out.string().c_str());
    return 0;
}

int cmd_train1(const Flags& f) {
    auto c = resolve(f);
    fs::create_directories(c.out);
    write_run_config(c.out / "config.json", c);
    auto model = c.base_model();
    inject(model, c.injection);
    const auto data = prepare_samples(training_split(c), model.config());
    const auto t0 = std::chrono::steady_clock::now();
    const auto r = train_stage1(model, data, c.train, progress(25));
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    save_adapter(model, TrainingStage::lora, c.out / "adapter_stage1.samlp");
    write_loss_csv(c.out / "loss_stage1.csv", r.curve);
    write_json(c.out / "summary.json", {{"stage", "lora"},
                                        {"steps", r.steps},
                                        {"train_images", data.size()},
                                        {"train_dice", r.final_dice},
                                        {"trainable_params", trainable_parameter_count(model)},
                                        {"seconds", secs}});
    std::printf("stage 1: %lld steps, train dice %.4f\n", static_cast<long long>(r.steps), r.final_dice);
    return 0;
}

int cmd_train2(const Flags& f, const std::string& init, const std::string& prompts) {
    if (init.empty()) throw ValidationError("train-stage2 requires --init <stage-1 adapter checkpoint>");
    auto c = resolve(f);
    if (prompts == "mask") c.train.stage2_point_prompts = false;
    else if (prompts == "point") c.train.stage2_mask_prompt = false;
    else if (prompts != "point+mask") throw ValidationError("--prompts must be point, mask or point+mask");
    fs::create_directories(c.out);
    auto model = c.base_model();
    const auto ckpt = load_adapter(model, init);
    if (ckpt.stage != TrainingStage::lora) throw ConfigError("--init must be a stage-1 adapter checkpoint");
    c.injection = ckpt.plan;
    write_run_config(c.out / "config.json", c);
    const auto data = prepare_samples(training_split(c), model.config());
    const double before = dataset_dice(model, data, 0);
    const auto r = train_stage2(model, data, c.train, progress(25));
    save_adapter(model, TrainingStage::promptable, c.out / "adapter_stage2.samlp");
    write_loss_csv(c.out / "loss_stage2.csv", r.curve);
    write_json(c.out / "summary.json", {{"stage", "promptable"},
                                        {"steps", r.steps},
                                        {"train_dice_stage1", before},
                                        {"train_dice_refined", r.final_dice},
                                        {"trainable_params", trainable_parameter_count(model)}});
    std::printf("stage 2: %lld steps, refined train dice %.4f (stage-1 %.4f)\n", static_cast<long long>(r.steps),
                r.final_dice, before);
    return 0;
}

int cmd_infer(const Flags& f, const std::string& adapter, const std::string& model_path, bool all_splits) {
    auto c = resolve(f);
    const auto model = load_predictor(c, adapter, model_path);
    auto samples = load_samples(c.dataset);
    if (!all_splits) samples = filter_split(samples, c.eval.split);
    if (samples.empty()) throw ValidationError("no images in the selected split");
    fs::create_directories(c.out / "masks");
    std::ofstream jl(c.out / "predictions.jsonl");
    const auto S = model.config().image_size;
    for (const auto& s : samples) {
        const auto pre = preprocess(s.image, S);
        const auto r = predict_refined(model, pre.canvas, c.inference);
        cv::Mat canvas_mask(static_cast<int>(S), static_cast<int>(S), CV_8UC1,
                            const_cast<std::uint8_t*>(r.selected_mask.data()));
        cv::Mat full = untransform_mask(canvas_mask, pre.transform) * 255;
        const auto stem = fs::path(s.source_id).stem().string();
        cv::imwrite((c.out / "masks" / (stem + ".png")).string(), full, {cv::IMWRITE_PNG_BILEVEL, 1});
        auto canvas_boxes = nlohmann::json::array(), boxes = nlohmann::json::array();
        cv::Mat cm = canvas_mask.clone();
        for (const auto& b : mask_to_boxes(cm, c.eval.min_area)) canvas_boxes.push_back({b.x1, b.y1, b.x2, b.y2});
        for (const auto& d : mask_to_detections(r.selected_mask, r.selected_score, pre.transform, c.eval.min_area))
            boxes.push_back({d.box.x1, d.box.y1, d.box.x2, d.box.y2});
        jl << nlohmann::json{{"image_id", s.source_id},
                             {"score", r.selected_score},
                             {"level", r.selected_level},
                             {"iterations", r.iterations_used},
                             {"canvas_boxes", canvas_boxes},
                             {"boxes", boxes}}
                  .dump()
           << '\n';
    }
    std::printf("predicted %zu images into %s\n", samples.size(), c.out.string().c_str());
    return 0;
}

int cmd_eval(const Flags& f, const std::string& adapter, const std::string& model_path, bool overlays) {
    auto c = resolve(f);
    if (overlays) c.eval.overlay_dir = c.out / "overlays";
    const auto model = load_predictor(c, adapter, model_path);
    const auto samples = load_samples(c.dataset);
    const auto r = evaluate(model, samples, c.eval);
    write_report(c.out, r);
    if (overlays) write_overlays(c.eval.overlay_dir, samples, r);
    std::printf("%s P %.4f R %.4f F1 %.4f AP %.4f (%lld images, IoU %.2f)\n", to_string(c.eval.split).c_str(), r.precision,
                r.recall, r.f1, r.ap, static_cast<long long>(r.n_images), r.iou_threshold);
    return 0;
}

int cmd_export(const Flags& f, const std::string& adapter) {
    auto c = resolve(f);
    auto m = load_predictor(c, adapter, {});
    fs::create_directories(c.out);
    save_model(merge_adapters(m), c.out / "merged.samlp");
    std::printf("wrote %s\n", (c.out / "merged.samlp").string().c_str());
    return 0;
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    for (std::string tok; std::getline(ss, tok, ',');)
        if (!tok.empty()) out.push_back(tok);
    return out;
}

int cmd_ablate(const Flags& f, const std::string& axis, const std::string& values_arg) {
    auto base = resolve(f);
    if (axis != "rank" && axis != "injection" && axis != "refine" && axis != "prompt")
        throw ValidationError("--axis must be rank, injection, refine or prompt");
    std::vector<std::string> values = split_list(values_arg);
    if (values.empty()) {
        if (axis == "rank") values = {"1", "2", "4", "8", "16"};
        if (axis == "injection") values = {"encoder", "decoder", "both"};
        if (axis == "refine") values = {"0", "1", "2", "3", "4", "5"};
        if (axis == "prompt") values = {"point", "mask", "point+mask"};
    }
    fs::create_directories(base.out);
    write_run_config(base.out / "config.json", base);
    const auto samples = load_samples(base.dataset);
    auto train_samples = filter_split(samples, Split::train);
    if (train_samples.empty()) throw ValidationError("dataset has no training images");

    std::ofstream csv(base.out / "ablation.csv");
    csv << "axis,value,trainable_params,lora_params,precision,recall,f1,ap,train_dice\n";
    auto row = [&](const std::string& v, std::int64_t trainable, std::int64_t lora, const DetectionReport& r, double dice) {
        char line[256];
        std::snprintf(line, sizeof(line), "%s,%s,%lld,%lld,%.6f,%.6f,%.6f,%.6f,%.6f\n", axis.c_str(), v.c_str(),
                      static_cast<long long>(trainable), static_cast<long long>(lora), r.precision, r.recall, r.f1, r.ap,
                      dice);
        csv << line;
        csv.flush();
        std::printf("%s", line);
    };
    auto lora_total = [](const SamModel& m) {
        return lora_parameter_count(m, Component::image_encoder) + lora_parameter_count(m, Component::mask_decoder);
    };

    const auto cfg = base.model();
    const auto data = prepare_samples(train_samples, cfg);
    auto stage1 = [&](const InjectionPlan& plan) {
        auto m = base.base_model();
        inject(m, plan);
        auto r = train_stage1(m, data, base.train);
        return std::make_pair(std::move(m), r.final_dice);
    };

    if (axis == "rank" || axis == "injection") {
        for (const auto& v : values) {
            auto plan = base.injection;
            if (axis == "rank") plan.rank = std::stoll(v);
            else plan.targets = parse_targets(v);
            auto [m, dice] = stage1(plan);
            const auto trainable = trainable_parameter_count(m);
            row(v, trainable, lora_total(m), evaluate(m, samples, base.eval), dice);
        }
        return 0;
    }
    auto [m1, dice1] = stage1(base.injection);
    (void)dice1;
    if (axis == "refine") {
        auto m = m1.clone();
        auto r = train_stage2(m, data, base.train);
        for (const auto& v : values) {
            auto ec = base.eval;
            ec.refine_iters = std::stoi(v);
            row(v, trainable_parameter_count(m), lora_total(m), evaluate(m, samples, ec),
                dataset_dice(m, data, ec.refine_iters));
        }
        (void)r;
        return 0;
    }
    for (const auto& v : values) {
        auto tc = base.train;
        tc.stage2_point_prompts = v != "mask";
        tc.stage2_mask_prompt = v != "point";
        if (v != "mask" && v != "point" && v != "point+mask") throw ValidationError("prompt values: point, mask, point+mask");
        auto m = m1.clone();
        train_stage2(m, data, tc);
        auto ec = base.eval;
        if (ec.refine_iters == 0) ec.refine_iters = 1;
        row(v, trainable_parameter_count(m), lora_total(m), evaluate(m, samples, ec), dataset_dice(m, data, ec.refine_iters));
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"samlp: low-rank adaptation of a promptable segmentation model for licence plate detection"};
    app.require_subcommand(1);
    Flags f;
    std::string init, adapter, model_path, axis, values, prompts = "point+mask";
    bool overlays = false, all_splits = false;
    SynthConfig sc;
    std::int64_t test_n = 0;

    auto* synth = app.add_subcommand("synth-data", "write a synthetic plate dataset in generic_json form");
    add_common(synth, f);
    synth->add_option("--width", sc.width, "image width");
    synth->add_option("--height", sc.height, "image height");
    synth->add_option("--min-plates", sc.min_plates, "minimum plates per image");
    synth->add_option("--max-plates", sc.max_plates, "maximum plates per image");
    synth->add_option("--test-n", test_n, "extra test-split images");

    auto* t1 = app.add_subcommand("train-stage1", "None-prompt adapter training");
    add_common(t1, f);
    add_train(t1, f);

    auto* t2 = app.add_subcommand("train-stage2", "promptable training from a stage-1 adapter");
    add_common(t2, f);
    add_train(t2, f);
    t2->add_option("--init", init, "stage-1 adapter checkpoint");
    t2->add_option("--prompts", prompts, "point | mask | point+mask");

    auto* inf = app.add_subcommand("infer", "predict masks and boxes");
    add_common(inf, f);
    add_eval(inf, f);
    inf->add_option("--adapter", adapter, "adapter checkpoint");
    inf->add_option("--model", model_path, "merged full-weight checkpoint");
    inf->add_flag("--all", all_splits, "predict every split instead of --split");

    auto* ev = app.add_subcommand("eval", "detection metrics on one split");
    add_common(ev, f);
    add_eval(ev, f);
    ev->add_option("--adapter", adapter, "adapter checkpoint");
    ev->add_option("--model", model_path, "merged full-weight checkpoint");
    ev->add_flag("--overlays", overlays, "write overlay PNGs");

    auto* ex = app.add_subcommand("export-merged", "fold adapters into the base weights");
    add_common(ex, f);
    ex->add_option("--adapter", adapter, "adapter checkpoint")->required();

    auto* ab = app.add_subcommand("ablate", "sweep one axis and tabulate F1/AP");
    add_common(ab, f);
    add_train(ab, f);
    add_eval(ab, f);
    ab->add_option("--axis", axis, "rank | injection | refine | prompt")->required();
    ab->add_option("--values", values, "comma-separated values (defaults per axis)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*synth) return cmd_synth(f, sc, test_n);
        if (*t1) return cmd_train1(f);
        if (*t2) return cmd_train2(f, init, prompts);
        if (*inf) return cmd_infer(f, adapter, model_path, all_splits);
        if (*ev) return cmd_eval(f, adapter, model_path, overlays);
        if (*ex) return cmd_export(f, adapter);
        if (*ab) return cmd_ablate(f, axis, values);
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const ArchiveError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    }
    return 0;
}
