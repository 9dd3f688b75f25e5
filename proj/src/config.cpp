#include "samlp/config.hpp"

#include <fstream>
#include <iostream>
#include <iterator>

#include "samlp/errors.hpp"

namespace samlp {

ModelConfig RunConfig::model() const {
    nlohmann::json j = ModelConfig::preset(preset);
    j.merge_patch(model_overrides);
    auto cfg = j.get<ModelConfig>();
    cfg.validate();
    return cfg;
}

SamModel RunConfig::base_model() const {
    const auto cfg = model();
    if (base.empty()) return SamModel(cfg);
    auto m = load_model(base);
    if (m.config().hash() != cfg.hash())
        throw ConfigError("base checkpoint '" + base.string() + "' was built for a different model configuration");
    if (m.injection()) throw ConfigError("base checkpoint must not carry adapters; export a merged model");
    return m;
}

void to_json(nlohmann::json& j, const DatasetSpec& d) {
    j = {{"format", d.format},
         {"root", d.root.string()},
         {"synth_n", d.synth_n},
         {"synth_seed", d.synth_seed},
         {"synth_width", d.synth.width},
         {"synth_height", d.synth.height},
         {"synth_min_plates", d.synth.min_plates},
         {"synth_max_plates", d.synth.max_plates},
         {"synth_split", to_string(d.synth.split)},
         {"synth_test_n", d.synth_test_n},
         {"ufpr_corner_masks", d.ufpr_corner_masks}};
}

void from_json(const nlohmann::json& j, DatasetSpec& d) {
    const DatasetSpec def;
    d.format = j.value("format", def.format);
    d.root = j.value("root", std::string{});
    d.synth_n = j.value("synth_n", def.synth_n);
    d.synth_seed = j.value("synth_seed", def.synth_seed);
    d.synth.width = j.value("synth_width", def.synth.width);
    d.synth.height = j.value("synth_height", def.synth.height);
    d.synth.min_plates = j.value("synth_min_plates", def.synth.min_plates);
    d.synth.max_plates = j.value("synth_max_plates", def.synth.max_plates);
    d.synth.split = split_from_string(j.value("synth_split", to_string(def.synth.split)));
    d.synth_test_n = j.value("synth_test_n", def.synth_test_n);
    d.ufpr_corner_masks = j.value("ufpr_corner_masks", def.ufpr_corner_masks);
    if (d.synth_n < 0 || d.synth_test_n < 0) throw ValidationError("synth_n and synth_test_n must be >= 0");
}

void to_json(nlohmann::json& j, const RunConfig& c) {
    j = {{"preset", to_string(c.preset)},
         {"model_overrides", c.model_overrides},
         {"model", c.model()},
         {"injection", c.injection},
         {"train", c.train},
         {"inference",
          {{"refine_iters", c.inference.refine_iters},
           {"binarize_threshold", c.inference.binarize_threshold},
           {"binarize_mask_prompt", c.inference.binarize_mask_prompt}}},
         {"eval", c.eval},
         {"dataset", c.dataset},
         {"out", c.out.string()},
         {"base", c.base.string()}};
}

void from_json(const nlohmann::json& j, RunConfig& c) {
    const RunConfig def;
    c.preset = preset_from_string(j.value("preset", to_string(def.preset)));
    c.model_overrides = j.value("model_overrides", nlohmann::json::object());
    if (!c.model_overrides.is_object()) throw ValidationError("model_overrides must be an object");
    if (j.contains("injection")) c.injection = j.at("injection").get<InjectionPlan>();
    if (j.contains("train")) c.train = j.at("train").get<TrainConfig>();
    if (j.contains("inference")) {
        const auto& i = j.at("inference");
        c.inference.refine_iters = i.value("refine_iters", def.inference.refine_iters);
        c.inference.binarize_threshold = i.value("binarize_threshold", def.inference.binarize_threshold);
        c.inference.binarize_mask_prompt = i.value("binarize_mask_prompt", def.inference.binarize_mask_prompt);
    }
    if (j.contains("eval")) c.eval = j.at("eval").get<EvalConfig>();
    if (j.contains("dataset")) c.dataset = j.at("dataset").get<DatasetSpec>();
    c.out = j.value("out", def.out.string());
    c.base = j.value("base", std::string{});
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ValidationError("cannot open config '" + path.string() + "'");
    try {
        return nlohmann::json::parse(is).get<RunConfig>();
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("config '" + path.string() + "': " + e.what());
    }
}

void write_run_config(const std::filesystem::path& path, const RunConfig& c) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write '" + path.string() + "'");
    os << nlohmann::json(c).dump(2) << '\n';
}

std::vector<Sample> load_samples(const DatasetSpec& spec) {
    if (spec.format == "synth") {
        auto out = synthesize_dataset(spec.synth_n, spec.synth_seed, spec.synth);
        if (spec.synth_test_n > 0) {
            auto tc = spec.synth;
            tc.split = Split::test;
            auto test = synthesize_dataset(spec.synth_test_n, spec.synth_seed ^ 0x5eed7e57ULL, tc);
            std::move(test.begin(), test.end(), std::back_inserter(out));
        }
        return out;
    }
    LoadOptions opts;
    opts.ufpr_corner_masks = spec.ufpr_corner_masks;
    auto load = load_dataset(spec.root, format_from_string(spec.format), opts);
    for (const auto& e : load.errors) std::cerr << "  skipped " << e << '\n';
    return std::move(load.samples);
}

std::vector<Sample> filter_split(const std::vector<Sample>& samples, Split split) {
    std::vector<Sample> out;
    for (const auto& s : samples)
        if (s.split == split) out.push_back(s);
    return out;
}

}  // namespace samlp
