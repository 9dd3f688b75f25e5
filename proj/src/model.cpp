#include "samlp/model.hpp"

#include <algorithm>
#include <cmath>

namespace samlp {

std::string to_string(ScalePreset p) {
    switch (p) {
        case ScalePreset::tiny: return "tiny";
        case ScalePreset::small: return "small";
        case ScalePreset::vitb_shape: return "vitb-shape";
    }
    return "?";
}

ScalePreset preset_from_string(const std::string& s) {
    if (s == "tiny") return ScalePreset::tiny;
    if (s == "small") return ScalePreset::small;
    if (s == "vitb-shape" || s == "vitb") return ScalePreset::vitb_shape;
    throw ValidationError("unknown preset '" + s + "' (expected tiny, small, vitb-shape)");
}

ModelConfig ModelConfig::preset(ScalePreset p) {
    ModelConfig c;
    c.scale_preset = p;
    switch (p) {
        case ScalePreset::tiny:
            break;
        case ScalePreset::small:
            c.image_size = 512;
            c.encoder_dim = 128;
            c.encoder_depth = 4;
            c.decoder_dim = 128;
            c.decoder_mlp_dim = 512;
            c.iou_head_hidden = 128;
            c.mask_prompt_size = 128;
            break;
        case ScalePreset::vitb_shape:
            c.image_size = 1024;
            c.encoder_dim = 768;
            c.encoder_depth = 12;
            c.encoder_heads = 12;
            c.decoder_dim = 256;
            c.decoder_heads = 8;
            c.decoder_mlp_dim = 2048;
            c.iou_head_hidden = 256;
            c.mask_prompt_size = 256;
            break;
    }
    return c;
}

void ModelConfig::validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("ModelConfig: " + m); };
    if (image_size <= 0 || patch_size <= 0 || image_size % patch_size != 0)
        fail("image_size must be a positive multiple of patch_size");
    if (mask_prompt_size * 4 != image_size) fail("mask_prompt_size must equal image_size / 4");
    // The decoder upsamples the embedding grid 4x, which must land on the dense-prompt grid.
    if (grid_size() * 4 != mask_prompt_size) fail("patch_size must be 16 so that 4 * grid == mask_prompt_size");
    if (num_mask_outputs != kNumMaskOutputs) fail("num_mask_outputs is fixed at 3");
    if (encoder_dim % 4 != 0 || encoder_dim % encoder_heads != 0) fail("encoder_dim must divide by 4 and by heads");
    if (decoder_dim % 16 != 0) fail("decoder_dim must be a multiple of 16");
    if ((decoder_dim / attention_downsample) % decoder_heads != 0 || decoder_dim % decoder_heads != 0)
        fail("decoder attention widths must divide by decoder_heads");
    if (encoder_depth < 1 || decoder_depth < 1 || encoder_mlp_ratio < 1 || decoder_mlp_dim < 1 || iou_head_hidden < 1)
        fail("depths and hidden widths must be positive");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = nlohmann::json{{"image_size", c.image_size},
                       {"patch_size", c.patch_size},
                       {"encoder_dim", c.encoder_dim},
                       {"encoder_depth", c.encoder_depth},
                       {"encoder_heads", c.encoder_heads},
                       {"encoder_mlp_ratio", c.encoder_mlp_ratio},
                       {"decoder_dim", c.decoder_dim},
                       {"decoder_depth", c.decoder_depth},
                       {"decoder_heads", c.decoder_heads},
                       {"decoder_mlp_dim", c.decoder_mlp_dim},
                       {"attention_downsample", c.attention_downsample},
                       {"iou_head_hidden", c.iou_head_hidden},
                       {"num_mask_outputs", c.num_mask_outputs},
                       {"mask_prompt_size", c.mask_prompt_size},
                       {"scale_preset", to_string(c.scale_preset)},
                       {"init_seed", c.init_seed}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
    ModelConfig d = j.contains("scale_preset") ? ModelConfig::preset(preset_from_string(j.at("scale_preset")))
                                               : ModelConfig{};
    auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) j.at(key).get_to(field);
    };
    get("image_size", d.image_size);
    get("patch_size", d.patch_size);
    get("encoder_dim", d.encoder_dim);
    get("encoder_depth", d.encoder_depth);
    get("encoder_heads", d.encoder_heads);
    get("encoder_mlp_ratio", d.encoder_mlp_ratio);
    get("decoder_dim", d.decoder_dim);
    get("decoder_depth", d.decoder_depth);
    get("decoder_heads", d.decoder_heads);
    get("decoder_mlp_dim", d.decoder_mlp_dim);
    get("attention_downsample", d.attention_downsample);
    get("iou_head_hidden", d.iou_head_hidden);
    get("num_mask_outputs", d.num_mask_outputs);
    get("mask_prompt_size", d.mask_prompt_size);
    get("init_seed", d.init_seed);
    c = d;
}

std::uint64_t ModelConfig::hash() const {
    const std::string text = nlohmann::json(*this).dump();
    std::uint64_t h = 14695981039346656037ull;  // FNV-1a
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    return h;
}

void to_json(nlohmann::json& j, const InjectionPlan& p) {
    auto targets = nlohmann::json::array();
    for (auto c : p.targets) targets.push_back(to_string(c));
    j = nlohmann::json{{"targets", targets},
                       {"projections", {"query", "value"}},
                       {"rank", p.rank},
                       {"scale", p.scale},
                       {"init_sigma", p.init_sigma},
                       {"seed", p.seed}};
}

void from_json(const nlohmann::json& j, InjectionPlan& p) {
    p.targets.clear();
    for (const auto& t : j.at("targets")) {
        const auto s = t.get<std::string>();
        if (s == "image_encoder") p.targets.insert(Component::image_encoder);
        else if (s == "mask_decoder") p.targets.insert(Component::mask_decoder);
        else throw ValidationError("injection target '" + s + "' is not allowed");
    }
    p.rank = j.at("rank").get<std::int64_t>();
    p.scale = j.value("scale", 1.0f);
    p.init_sigma = j.value("init_sigma", kDefaultLoraSigma);
    p.seed = j.value("seed", std::uint64_t{0});
}

Tensor ImageEmbedding::to_chw() const {
    const auto c = channels();
    Tensor out({c, grid, grid});
    for (std::int64_t p = 0; p < grid * grid; ++p)
        for (std::int64_t ch = 0; ch < c; ++ch) out.values()[static_cast<std::size_t>(ch * grid * grid + p)] = features.at(p, ch);
    return out;
}

void PromptSet::validate(const ModelConfig& cfg) const {
    const auto s = static_cast<float>(cfg.image_size);
    for (const auto& p : points) {
        if (!(p.x >= 0.0f && p.x < s && p.y >= 0.0f && p.y < s))
            throw ValidationError("prompt point (" + std::to_string(p.x) + ", " + std::to_string(p.y) +
                                  ") outside canvas [0, " + std::to_string(cfg.image_size) + ")");
    }
    for (const auto& b : boxes) {
        if (!(b.x1 < b.x2 && b.y1 < b.y2)) throw ValidationError("prompt box must satisfy x1 < x2 and y1 < y2");
        if (b.x1 < 0.0f || b.y1 < 0.0f || b.x2 > s || b.y2 > s) throw ValidationError("prompt box outside canvas");
    }
    if (mask_logits) {
        const auto m = cfg.mask_prompt_size;
        if (mask_logits->size() != m * m)
            throw ValidationError("mask prompt must have " + std::to_string(m) + "x" + std::to_string(m) + " values");
    }
}

std::span<const float> MaskPrediction::logit_map(int level) const {
    const auto n = static_cast<std::size_t>(logit_size * logit_size);
    return std::span<const float>(logits.values()).subspan(static_cast<std::size_t>(level) * n, n);
}

Tensor MaskPrediction::logit_tensor(int level) const {
    const auto span = logit_map(level);
    return Tensor({logit_size, logit_size}, std::vector<float>(span.begin(), span.end()));
}

std::vector<float> upsample_bilinear(std::span<const float> src, std::int64_t in_size, std::int64_t out_size) {
    std::vector<float> out(static_cast<std::size_t>(out_size * out_size));
    const double ratio = static_cast<double>(in_size) / static_cast<double>(out_size);
    std::vector<std::int64_t> i0(static_cast<std::size_t>(out_size)), i1(i0.size());
    std::vector<float> w1(i0.size());
    for (std::int64_t o = 0; o < out_size; ++o) {
        double s = (static_cast<double>(o) + 0.5) * ratio - 0.5;
        s = std::clamp(s, 0.0, static_cast<double>(in_size - 1));
        const auto lo = static_cast<std::int64_t>(std::floor(s));
        i0[static_cast<std::size_t>(o)] = lo;
        i1[static_cast<std::size_t>(o)] = std::min(lo + 1, in_size - 1);
        w1[static_cast<std::size_t>(o)] = static_cast<float>(s - static_cast<double>(lo));
    }
    for (std::int64_t y = 0; y < out_size; ++y) {
        const auto uy = static_cast<std::size_t>(y);
        const float* r0 = src.data() + i0[uy] * in_size;
        const float* r1 = src.data() + i1[uy] * in_size;
        const float wy = w1[uy];
        for (std::int64_t x = 0; x < out_size; ++x) {
            const auto ux = static_cast<std::size_t>(x);
            const float wx = w1[ux];
            const float top = r0[i0[ux]] * (1.0f - wx) + r0[i1[ux]] * wx;
            const float bot = r1[i0[ux]] * (1.0f - wx) + r1[i1[ux]] * wx;
            out[static_cast<std::size_t>(y * out_size + x)] = top * (1.0f - wy) + bot * wy;
        }
    }
    return out;
}

namespace {

Tensor randn(Shape shape, Rng& rng) {
    Tensor t(std::move(shape));
    std::normal_distribution<float> n(0.0f, 1.0f);
    for (auto& v : t.values()) v = n(rng);
    return t;
}

}  // namespace

SamModel::SamModel(ModelConfig cfg) : cfg_(cfg), forward_calls_(std::make_shared<std::atomic<std::uint64_t>>(0)) {
    cfg_.validate();
    Rng rng(cfg_.init_seed);
    const auto grid = cfg_.grid_size();
    const auto enc = cfg_.encoder_dim;
    const auto dec = cfg_.decoder_dim;

    auto& ie = image_encoder_;
    ie.patch_embed = Linear(3 * cfg_.patch_size * cfg_.patch_size, enc, rng);
    ie.pos_embed = grid_encoding(grid, enc);
    for (std::int64_t i = 0; i < cfg_.encoder_depth; ++i) {
        EncoderBlock b{LayerNorm(enc), Attention(enc, cfg_.encoder_heads, rng), LayerNorm(enc),
                       Mlp(enc, enc * cfg_.encoder_mlp_ratio, enc, 2, Activation::gelu, rng)};
        ie.blocks.push_back(std::move(b));
    }
    ie.neck = Linear(enc, dec, rng);
    ie.neck_norm = LayerNorm(dec);

    auto& pe = prompt_encoder_;
    pe.point_embeddings = randn({4, dec}, rng);
    pe.no_mask_embed = randn({dec}, rng);
    pe.mask_conv1 = Linear(4, dec / 16, rng);
    pe.mask_norm1 = LayerNorm(dec / 16);
    pe.mask_conv2 = Linear(4 * (dec / 16), dec / 4, rng);
    pe.mask_norm2 = LayerNorm(dec / 4);
    pe.mask_conv3 = Linear(dec / 4, dec, rng);

    auto& md = mask_decoder_;
    md.iou_token = randn({1, dec}, rng);
    md.mask_tokens = randn({kNumMaskOutputs, dec}, rng);
    md.image_pe = grid_encoding(grid, dec);
    const auto ds = cfg_.attention_downsample;
    const auto heads = cfg_.decoder_heads;
    for (std::int64_t i = 0; i < cfg_.decoder_depth; ++i) {
        TwoWayBlock b{Attention(dec, heads, 1, rng),
                      LayerNorm(dec),
                      Attention(dec, heads, ds, rng),
                      LayerNorm(dec),
                      Mlp(dec, cfg_.decoder_mlp_dim, dec, 2, Activation::relu, rng),
                      LayerNorm(dec),
                      LayerNorm(dec),
                      Attention(dec, heads, ds, rng)};
        md.layers.push_back(std::move(b));
    }
    md.final_attn = Attention(dec, heads, ds, rng);
    md.norm_final = LayerNorm(dec);
    md.upscale1 = Linear(dec, 4 * (dec / 4), rng);
    md.upscale_norm = LayerNorm(dec / 4);
    md.upscale2 = Linear(dec / 4, 4 * (dec / 8), rng);
    for (int i = 0; i < kNumMaskOutputs; ++i) md.hypernetworks.emplace_back(dec, dec, dec / 8, 3, Activation::relu, rng);
    md.iou_head = Mlp(dec, cfg_.iou_head_hidden, kNumMaskOutputs, 3, Activation::relu, rng);
}

void SamModel::visit_parameters(const ParamVisitor& f) {
    auto& ie = image_encoder_;
    const auto ic = Component::image_encoder;
    ie.patch_embed.visit("image_encoder.patch_embed", ic, f);
    for (std::size_t i = 0; i < ie.blocks.size(); ++i) {
        const auto p = "image_encoder.blocks." + std::to_string(i);
        auto& b = ie.blocks[i];
        b.norm1.visit(p + ".norm1", ic, f);
        b.attn.visit(p + ".attn", ic, f);
        b.norm2.visit(p + ".norm2", ic, f);
        b.mlp.visit(p + ".mlp", ic, f);
    }
    ie.neck.visit("image_encoder.neck", ic, f);
    ie.neck_norm.visit("image_encoder.neck_norm", ic, f);

    auto& pe = prompt_encoder_;
    const auto pc = Component::prompt_encoder;
    f("prompt_encoder.point_embeddings", pe.point_embeddings, pc, ParamRole::base);
    f("prompt_encoder.no_mask_embed", pe.no_mask_embed, pc, ParamRole::base);
    pe.mask_conv1.visit("prompt_encoder.mask_downscaling.conv1", pc, f);
    pe.mask_norm1.visit("prompt_encoder.mask_downscaling.norm1", pc, f);
    pe.mask_conv2.visit("prompt_encoder.mask_downscaling.conv2", pc, f);
    pe.mask_norm2.visit("prompt_encoder.mask_downscaling.norm2", pc, f);
    pe.mask_conv3.visit("prompt_encoder.mask_downscaling.conv3", pc, f);

    auto& md = mask_decoder_;
    const auto dc = Component::mask_decoder;
    f("mask_decoder.iou_token", md.iou_token, dc, ParamRole::base);
    f("mask_decoder.mask_tokens", md.mask_tokens, dc, ParamRole::base);
    for (std::size_t i = 0; i < md.layers.size(); ++i) {
        const auto p = "mask_decoder.transformer.layers." + std::to_string(i);
        auto& l = md.layers[i];
        l.self_attn.visit(p + ".self_attn", dc, f);
        l.norm1.visit(p + ".norm1", dc, f);
        l.cross_token_to_image.visit(p + ".cross_attn_token_to_image", dc, f);
        l.norm2.visit(p + ".norm2", dc, f);
        l.mlp.visit(p + ".mlp", dc, f);
        l.norm3.visit(p + ".norm3", dc, f);
        l.norm4.visit(p + ".norm4", dc, f);
        l.cross_image_to_token.visit(p + ".cross_attn_image_to_token", dc, f);
    }
    md.final_attn.visit("mask_decoder.transformer.final_attn_token_to_image", dc, f);
    md.norm_final.visit("mask_decoder.transformer.norm_final_attn", dc, f);
    md.upscale1.visit("mask_decoder.output_upscaling.0", dc, f);
    md.upscale_norm.visit("mask_decoder.output_upscaling.1", dc, f);
    md.upscale2.visit("mask_decoder.output_upscaling.3", dc, f);
    for (std::size_t i = 0; i < md.hypernetworks.size(); ++i)
        md.hypernetworks[i].visit("mask_decoder.output_hypernetworks_mlps." + std::to_string(i), dc, f);
    md.iou_head.visit("mask_decoder.iou_prediction_head", dc, f);
}

ParamList SamModel::parameters() const {
    ParamList out;
    const_cast<SamModel*>(this)->visit_parameters(
        [&](const std::string& path, Tensor& t, Component c, ParamRole r) { out.push_back({path, t, c, r}); });
    return out;
}

std::int64_t SamModel::parameter_count() const {
    std::int64_t n = 0;
    for (const auto& p : parameters()) n += p.tensor.size();
    return n;
}

std::vector<AttentionSite> SamModel::attention_sites(Component c) {
    std::vector<AttentionSite> out;
    if (c == Component::image_encoder) {
        for (std::size_t i = 0; i < image_encoder_.blocks.size(); ++i)
            out.push_back({"image_encoder.blocks." + std::to_string(i) + ".attn", c, &image_encoder_.blocks[i].attn});
    } else if (c == Component::mask_decoder) {
        for (std::size_t i = 0; i < mask_decoder_.layers.size(); ++i) {
            const auto p = "mask_decoder.transformer.layers." + std::to_string(i);
            auto& l = mask_decoder_.layers[i];
            out.push_back({p + ".self_attn", c, &l.self_attn});
            out.push_back({p + ".cross_attn_token_to_image", c, &l.cross_token_to_image});
            out.push_back({p + ".cross_attn_image_to_token", c, &l.cross_image_to_token});
        }
        out.push_back({"mask_decoder.transformer.final_attn_token_to_image", c, &mask_decoder_.final_attn});
    }
    return out;
}

SamModel SamModel::clone() const {
    SamModel copy = *this;
    copy.visit_parameters([](const std::string&, Tensor& t, Component, ParamRole) { t = t.clone(); });
    copy.forward_calls_ = std::make_shared<std::atomic<std::uint64_t>>(0);
    return copy;
}

ImageEmbedding SamModel::encode_image(const Tensor& image) const {
    const auto s = cfg_.image_size, p = cfg_.patch_size, grid = cfg_.grid_size();
    if (image.shape() != Shape{3, s, s})
        throw ConfigError("encode_image: expected [3 x " + std::to_string(s) + " x " + std::to_string(s) + "], got " +
                          shape_str(image.shape()));
    const auto feat = 3 * p * p;
    Tensor patches({grid * grid, feat});
    const auto& px = image.values();
    for (std::int64_t gy = 0; gy < grid; ++gy)
        for (std::int64_t gx = 0; gx < grid; ++gx) {
            float* row = patches.values().data() + (gy * grid + gx) * feat;
            for (std::int64_t c = 0; c < 3; ++c)
                for (std::int64_t py = 0; py < p; ++py)
                    for (std::int64_t qx = 0; qx < p; ++qx)
                        row[(c * p + py) * p + qx] = px[static_cast<std::size_t>((c * s + gy * p + py) * s + gx * p + qx)];
        }

    auto x = ops::add(image_encoder_.patch_embed.forward(patches), image_encoder_.pos_embed);
    for (const auto& b : image_encoder_.blocks) {
        auto h = b.norm1.forward(x);
        x = ops::add(x, b.attn.forward(h, h, h));
        x = ops::add(x, b.mlp.forward(b.norm2.forward(x)));
    }
    return ImageEmbedding{x, grid};
}

PromptEmbedding SamModel::encode_prompts(const PromptSet& prompts) const {
    prompts.validate(cfg_);
    const auto d = cfg_.decoder_dim, grid = cfg_.grid_size();
    const auto s = static_cast<float>(cfg_.image_size);
    const auto& pe = prompt_encoder_;

    std::vector<Tensor> tokens;
    auto token = [&](float x, float y, std::int64_t embed_row) {
        const auto enc = sinusoidal_encoding((x + 0.5f) / s, (y + 0.5f) / s, d, grid);
        return ops::add(Tensor({1, d}, enc), ops::slice_rows(pe.point_embeddings, embed_row, embed_row + 1));
    };
    for (const auto& p : prompts.points) tokens.push_back(token(p.x, p.y, static_cast<std::int64_t>(p.label)));
    for (const auto& b : prompts.boxes) {
        tokens.push_back(token(b.x1, b.y1, 2));
        tokens.push_back(token(b.x2, b.y2, 3));
    }

    PromptEmbedding out;
    out.sparse_tokens = tokens.empty() ? Tensor({0, d}) : ops::concat_rows(tokens);
    if (prompts.mask_logits) {
        const auto m = cfg_.mask_prompt_size;
        auto x = prompts.mask_logits->rank() == 2 && prompts.mask_logits->dim(1) == 1 ? *prompts.mask_logits
                                                                                       : prompts.mask_logits->reshape({m * m, 1});
        x = ops::space_to_depth(x, m, m, 2);
        x = ops::gelu(pe.mask_norm1.forward(pe.mask_conv1.forward(x)));
        x = ops::space_to_depth(x, m / 2, m / 2, 2);
        x = ops::gelu(pe.mask_norm2.forward(pe.mask_conv2.forward(x)));
        out.dense_embedding = pe.mask_conv3.forward(x);
    } else {
        out.dense_embedding = ops::broadcast_rows(pe.no_mask_embed, grid * grid);
    }
    return out;
}

Tensor SamModel::upscale(const Tensor& image_tokens) const {
    const auto grid = cfg_.grid_size();
    const auto& md = mask_decoder_;
    auto x = ops::depth_to_space(md.upscale1.forward(image_tokens), grid, grid, 2);
    x = ops::gelu(md.upscale_norm.forward(x));
    x = ops::depth_to_space(md.upscale2.forward(x), 2 * grid, 2 * grid, 2);
    return ops::gelu(x);
}

MaskPrediction SamModel::decode_masks(const ImageEmbedding& embedding, const PromptEmbedding& prompt) const {
    const auto grid = cfg_.grid_size(), d = cfg_.decoder_dim;
    if (embedding.grid != grid || embedding.features.shape() != Shape{grid * grid, cfg_.encoder_dim})
        throw ConfigError("decode_masks: image embedding " + shape_str(embedding.features.shape()) +
                          " does not match the model configuration");
    if (prompt.dense_embedding.shape() != Shape{grid * grid, d} || prompt.sparse_tokens.rank() != 2 ||
        prompt.sparse_tokens.dim(1) != d)
        throw ConfigError("decode_masks: prompt embedding width does not match decoder_dim");

    const auto& ie = image_encoder_;
    const auto& md = mask_decoder_;
    auto keys = ie.neck_norm.forward(ie.neck.forward(embedding.features));
    keys = ops::add(keys, prompt.dense_embedding);
    const auto& key_pe = md.image_pe;

    std::vector<Tensor> parts{md.iou_token, md.mask_tokens};
    if (prompt.num_sparse() > 0) parts.push_back(prompt.sparse_tokens);
    const auto query_pe = ops::concat_rows(parts);
    auto queries = query_pe;

    for (std::size_t i = 0; i < md.layers.size(); ++i) {
        const auto& l = md.layers[i];
        if (i == 0) {
            queries = l.self_attn.forward(queries, queries, queries);
        } else {
            const auto q = ops::add(queries, query_pe);
            queries = ops::add(queries, l.self_attn.forward(q, q, queries));
        }
        queries = l.norm1.forward(queries);

        auto q = ops::add(queries, query_pe);
        auto k = ops::add(keys, key_pe);
        queries = l.norm2.forward(ops::add(queries, l.cross_token_to_image.forward(q, k, keys)));
        queries = l.norm3.forward(ops::add(queries, l.mlp.forward(queries)));

        q = ops::add(queries, query_pe);
        k = ops::add(keys, key_pe);
        keys = l.norm4.forward(ops::add(keys, l.cross_image_to_token.forward(k, q, queries)));
    }
    {
        const auto q = ops::add(queries, query_pe);
        const auto k = ops::add(keys, key_pe);
        queries = md.norm_final.forward(ops::add(queries, md.final_attn.forward(q, k, keys)));
    }

    const auto iou_out = ops::slice_rows(queries, 0, 1);
    const auto upscaled = upscale(keys);
    std::vector<Tensor> hyper;
    for (int i = 0; i < kNumMaskOutputs; ++i)
        hyper.push_back(md.hypernetworks[static_cast<std::size_t>(i)].forward(ops::slice_rows(queries, 1 + i, 2 + i)));

    MaskPrediction out;
    out.logit_size = 4 * grid;
    out.mask_size = cfg_.image_size;
    out.logits = ops::matmul_nt(ops::concat_rows(hyper), upscaled);
    out.iou_scores = md.iou_head.forward(iou_out).reshape({kNumMaskOutputs});
    for (int i = 0; i < kNumMaskOutputs; ++i) {
        const auto up = upsample_bilinear(out.logit_map(i), out.logit_size, out.mask_size);
        auto& m = out.masks[static_cast<std::size_t>(i)];
        m.resize(up.size());
        std::transform(up.begin(), up.end(), m.begin(), [](float v) { return static_cast<std::uint8_t>(v > 0.0f); });
    }
    forward_calls_->fetch_add(1);
    return out;
}

MaskPrediction SamModel::forward(const Tensor& image, const PromptSet& prompts) const {
    return decode_masks(encode_image(image), encode_prompts(prompts));
}

}  // namespace samlp
