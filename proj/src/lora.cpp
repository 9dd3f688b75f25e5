#include "samlp/lora.hpp"

#include <cstdio>

namespace samlp {

std::string to_string(TrainingStage s) { return s == TrainingStage::lora ? "lora" : "promptable"; }

TrainingStage stage_from_string(const std::string& s) {
    if (s == "lora" || s == "1") return TrainingStage::lora;
    if (s == "promptable" || s == "2") return TrainingStage::promptable;
    throw ValidationError("unknown training stage '" + s + "'");
}

std::string hash_hex(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

void inject(SamModel& model, const InjectionPlan& plan) {
    if (model.injection()) throw ConfigError("inject: model already carries LoRA adapters");
    if (plan.targets.empty()) throw ValidationError("inject: empty target set");
    if (plan.targets.count(Component::prompt_encoder))
        throw ValidationError("inject: the prompt encoder is never an injection target");

    Rng rng(plan.seed);
    for (auto c : plan.targets) {
        for (auto& site : model.attention_sites(c)) {
            for (Linear* proj : {&site.attention->q_proj, &site.attention->v_proj}) {
                proj->lora = make_lora(proj->in_dim(), proj->out_dim(), plan.rank, rng, plan.init_sigma);
                proj->lora->scale = plan.scale;
            }
        }
    }
    model.set_injection(plan);
    set_stage_trainability(model, TrainingStage::lora);
}

std::int64_t trainable_parameter_count(const SamModel& model) {
    std::int64_t n = 0;
    for (const auto& p : model.parameters())
        if (p.tensor.requires_grad()) n += p.tensor.size();
    return n;
}

std::int64_t lora_parameter_count(const SamModel& model, Component c) {
    std::int64_t n = 0;
    for (const auto& site : const_cast<SamModel&>(model).attention_sites(c))
        for (const Linear* proj : {&site.attention->q_proj, &site.attention->v_proj})
            if (proj->lora) n += proj->lora->rank() * (proj->in_dim() + proj->out_dim());
    return n;
}

void set_stage_trainability(SamModel& model, TrainingStage stage, bool freeze_prompt_encoder) {
    if (!model.injection()) throw ConfigError("set_stage_trainability: model has no adapters");
    model.visit_parameters([&](const std::string&, Tensor& t, Component c, ParamRole role) {
        const bool is_lora = role != ParamRole::base;
        bool trainable = false;
        if (stage == TrainingStage::lora) {
            trainable = is_lora;
        } else {
            trainable = (is_lora && c == Component::mask_decoder) ||
                        (!freeze_prompt_encoder && c == Component::prompt_encoder);
        }
        t.set_requires_grad(trainable);
        t.zero_grad();
    });
}

namespace {

NamedArray to_named(const ParamRef& p) { return {p.path, p.tensor.shape(), p.tensor.values()}; }

void copy_into(Tensor& dst, const NamedArray& src) {
    if (dst.shape() != src.shape)
        throw ConfigError("array '" + src.name + "' has shape " + shape_str(src.shape) + ", model expects " +
                          shape_str(dst.shape()));
    dst.values() = src.data;
}

}  // namespace

AdapterCheckpoint save_adapter(const SamModel& model, TrainingStage stage, const std::filesystem::path& path) {
    if (!model.injection()) throw ConfigError("save_adapter: model has no adapters");
    AdapterCheckpoint ck;
    ck.plan = *model.injection();
    ck.stage = stage;
    ck.config_hash = model.config().hash();
    ck.model_config = model.config();
    for (const auto& p : model.parameters()) {
        const bool keep = p.role != ParamRole::base || (stage == TrainingStage::promptable && p.component == Component::prompt_encoder);
        if (keep) ck.archive.arrays.push_back(to_named(p));
    }
    ck.archive.meta = {{"format", "samlp-adapter"},
                       {"plan", ck.plan},
                       {"rank", ck.plan.rank},
                       {"stage", to_string(stage)},
                       {"config_hash", hash_hex(ck.config_hash)},
                       {"scale", ck.plan.scale},
                       {"model_config", ck.model_config}};
    write_archive(path, ck.archive);
    return ck;
}

AdapterCheckpoint load_adapter(SamModel& model, const std::filesystem::path& path) {
    AdapterCheckpoint ck;
    ck.archive = read_archive(path);
    const auto& meta = ck.archive.meta;
    if (meta.value("format", "") != "samlp-adapter") throw ConfigError("'" + path.string() + "' is not an adapter checkpoint");
    ck.plan = meta.at("plan").get<InjectionPlan>();
    ck.stage = stage_from_string(meta.at("stage").get<std::string>());
    ck.model_config = meta.at("model_config").get<ModelConfig>();
    ck.config_hash = model.config().hash();
    if (meta.at("config_hash").get<std::string>() != hash_hex(ck.config_hash))
        throw ConfigError("adapter config hash " + meta.at("config_hash").get<std::string>() +
                          " does not match model config hash " + hash_hex(ck.config_hash));

    if (!model.injection()) {
        inject(model, ck.plan);
    } else {
        const auto& have = *model.injection();
        if (have.targets != ck.plan.targets || have.rank != ck.plan.rank || have.scale != ck.plan.scale)
            throw ConfigError("adapter injection plan does not match the model's plan");
    }

    std::size_t restored = 0;
    model.visit_parameters([&](const std::string& name, Tensor& t, Component, ParamRole) {
        if (const auto* a = ck.archive.find(name)) {
            copy_into(t, *a);
            ++restored;
        }
    });
    if (restored != ck.archive.arrays.size()) throw ConfigError("adapter contains arrays the model does not have");
    return ck;
}

void save_model(const SamModel& model, const std::filesystem::path& path) {
    Archive a;
    a.meta = {{"format", "samlp-model"}, {"model_config", model.config()}, {"config_hash", hash_hex(model.config().hash())}};
    if (model.injection()) a.meta["plan"] = *model.injection();
    for (const auto& p : model.parameters()) a.arrays.push_back(to_named(p));
    write_archive(path, a);
}

SamModel load_model(const std::filesystem::path& path) {
    const auto a = read_archive(path);
    if (a.meta.value("format", "") != "samlp-model") throw ConfigError("'" + path.string() + "' is not a model checkpoint");
    SamModel model(a.meta.at("model_config").get<ModelConfig>());
    if (a.meta.contains("plan")) inject(model, a.meta.at("plan").get<InjectionPlan>());
    std::size_t restored = 0;
    model.visit_parameters([&](const std::string& name, Tensor& t, Component, ParamRole) {
        const auto* src = a.find(name);
        if (!src) throw ConfigError("model checkpoint is missing '" + name + "'");
        copy_into(t, *src);
        ++restored;
    });
    if (restored != a.arrays.size()) throw ConfigError("model checkpoint contains unknown arrays");
    return model;
}

SamModel merge_adapters(const SamModel& model) {
    SamModel merged = model.clone();
    for (auto c : {Component::image_encoder, Component::mask_decoder})
        for (auto& site : merged.attention_sites(c))
            for (Linear* proj : {&site.attention->q_proj, &site.attention->v_proj})
                if (proj->lora) {
                    proj->weight = merge_weights(proj->weight, *proj->lora);
                    proj->lora.reset();
                }
    merged.clear_injection();
    return merged;
}

}  // namespace samlp
