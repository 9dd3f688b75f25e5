#pragma once

// A configurable-scale promptable segmentation model with the three-part
// structure: image encoder, prompt encoder and a three-output mask decoder.

#include <array>
#include <atomic>
#include <cstdint>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "samlp/errors.hpp"
#include "samlp/nn.hpp"
#include "samlp/tensor.hpp"

namespace samlp {

inline constexpr int kNumMaskOutputs = 3;

enum class ScalePreset { tiny, small, vitb_shape };

std::string to_string(ScalePreset p);
ScalePreset preset_from_string(const std::string& s);

struct ModelConfig {
    std::int64_t image_size = 256;
    std::int64_t patch_size = 16;
    std::int64_t encoder_dim = 64;
    std::int64_t encoder_depth = 2;
    std::int64_t encoder_heads = 4;
    std::int64_t encoder_mlp_ratio = 4;
    std::int64_t decoder_dim = 64;
    std::int64_t decoder_depth = 2;
    std::int64_t decoder_heads = 4;
    std::int64_t decoder_mlp_dim = 256;
    std::int64_t attention_downsample = 2;
    std::int64_t iou_head_hidden = 64;
    std::int64_t num_mask_outputs = kNumMaskOutputs;
    std::int64_t mask_prompt_size = 64;
    ScalePreset scale_preset = ScalePreset::tiny;
    /// Seed of the deterministic base ("foundation") weights.
    std::uint64_t init_seed = 0;

    static ModelConfig preset(ScalePreset p);

    std::int64_t grid_size() const { return image_size / patch_size; }
    /// Throws ConfigError when an invariant does not hold.
    void validate() const;
    /// Stable 64-bit digest of the canonical JSON form.
    std::uint64_t hash() const;

    bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// Image encoder output: [grid*grid x encoder_dim] tokens, row-major over (y, x).
/// This is the channels-last view of a [C x H' x W'] feature map.
struct ImageEmbedding {
    Tensor features;
    std::int64_t grid = 0;

    std::int64_t channels() const { return features.dim(1); }
    /// [C, H', W'] copy for callers that want channel-first layout.
    Tensor to_chw() const;
};

enum class PointLabel { background = 0, foreground = 1 };

struct PromptPoint {
    float x = 0.0f;
    float y = 0.0f;
    PointLabel label = PointLabel::foreground;
};

struct PromptBox {
    float x1 = 0.0f, y1 = 0.0f, x2 = 0.0f, y2 = 0.0f;
};

/// Points and boxes are in canvas pixels. An entirely empty set is the "None" prompt.
struct PromptSet {
    std::vector<PromptPoint> points;
    std::vector<PromptBox> boxes;
    /// Dense [mask_prompt_size x mask_prompt_size] logit map.
    std::optional<Tensor> mask_logits;

    bool empty() const { return points.empty() && boxes.empty() && !mask_logits; }
    /// Throws ValidationError if any point/box/mask violates the canvas contract.
    void validate(const ModelConfig& cfg) const;
};

struct PromptEmbedding {
    Tensor sparse_tokens;    // [n_tokens x decoder_dim], n_tokens may be 0
    Tensor dense_embedding;  // [grid*grid x decoder_dim]

    std::int64_t num_sparse() const { return sparse_tokens.rank() == 2 ? sparse_tokens.dim(0) : 0; }
};

struct MaskPrediction {
    Tensor logits;      // [3 x mask_prompt_size^2]
    Tensor iou_scores;  // [3]
    std::array<std::vector<std::uint8_t>, kNumMaskOutputs> masks;  // image_size^2 each
    std::int64_t mask_size = 0;
    std::int64_t logit_size = 0;

    float score(int level) const { return iou_scores.at(level); }
    std::span<const float> logit_map(int level) const;
    /// Detached copy of one logit map shaped [logit_size x logit_size].
    Tensor logit_tensor(int level) const;
};

/// Bilinear resize of a square single-channel map with half-pixel centres.
std::vector<float> upsample_bilinear(std::span<const float> src, std::int64_t in_size, std::int64_t out_size);

struct EncoderBlock {
    LayerNorm norm1;
    Attention attn;
    LayerNorm norm2;
    Mlp mlp;
};

struct ImageEncoder {
    Linear patch_embed;
    Tensor pos_embed;  // fixed, not a parameter
    std::vector<EncoderBlock> blocks;
    Linear neck;
    LayerNorm neck_norm;
};

struct PromptEncoder {
    Tensor point_embeddings;  // [4 x D]: background, foreground, box top-left, box bottom-right
    Tensor no_mask_embed;     // [D]
    Linear mask_conv1;        // 2x2 stride 2, 1 -> D/16
    LayerNorm mask_norm1;
    Linear mask_conv2;        // 2x2 stride 2, D/16 -> D/4
    LayerNorm mask_norm2;
    Linear mask_conv3;        // 1x1, D/4 -> D
};

struct TwoWayBlock {
    Attention self_attn;
    LayerNorm norm1;
    Attention cross_token_to_image;
    LayerNorm norm2;
    Mlp mlp;
    LayerNorm norm3;
    LayerNorm norm4;
    Attention cross_image_to_token;
};

struct MaskDecoder {
    Tensor iou_token;    // [1 x D]
    Tensor mask_tokens;  // [3 x D]
    Tensor image_pe;     // fixed [grid^2 x D]
    std::vector<TwoWayBlock> layers;
    Attention final_attn;
    LayerNorm norm_final;
    Linear upscale1;  // transposed 2x2 stride 2, D -> D/4
    LayerNorm upscale_norm;
    Linear upscale2;  // transposed 2x2 stride 2, D/4 -> D/8
    std::vector<Mlp> hypernetworks;
    Mlp iou_head;
};

/// Which components carry adapters and at what rank.
struct InjectionPlan {
    std::set<Component> targets{Component::image_encoder, Component::mask_decoder};
    std::int64_t rank = 4;
    float scale = 1.0f;
    float init_sigma = 5.0f;
    std::uint64_t seed = 0;

    bool operator==(const InjectionPlan&) const = default;
};

void to_json(nlohmann::json& j, const InjectionPlan& p);
void from_json(const nlohmann::json& j, InjectionPlan& p);

class SamModel {
public:
    explicit SamModel(ModelConfig cfg);

    const ModelConfig& config() const { return cfg_; }

    /// image: preprocessed canvas [3 x S x S].
    ImageEmbedding encode_image(const Tensor& image) const;
    PromptEmbedding encode_prompts(const PromptSet& prompts) const;
    MaskPrediction decode_masks(const ImageEmbedding& embedding, const PromptEmbedding& prompt) const;
    MaskPrediction forward(const Tensor& image, const PromptSet& prompts) const;

    /// Every parameter array with its module path, in a fixed order.
    ParamList parameters() const;
    void visit_parameters(const ParamVisitor& f);
    /// Structural walk over every attention module in the given component.
    std::vector<AttentionSite> attention_sites(Component c);
    std::int64_t parameter_count() const;

    const std::optional<InjectionPlan>& injection() const { return injection_; }
    void set_injection(InjectionPlan plan) { injection_ = std::move(plan); }
    void clear_injection() { injection_.reset(); }

    /// Deep copy: no storage is shared with the source.
    SamModel clone() const;

    /// Number of completed forward() calls (decode_masks counts as one).
    std::uint64_t forward_calls() const { return forward_calls_->load(); }

    ImageEncoder& image_encoder() { return image_encoder_; }
    PromptEncoder& prompt_encoder() { return prompt_encoder_; }
    MaskDecoder& mask_decoder() { return mask_decoder_; }
    const ImageEncoder& image_encoder() const { return image_encoder_; }
    const PromptEncoder& prompt_encoder() const { return prompt_encoder_; }
    const MaskDecoder& mask_decoder() const { return mask_decoder_; }

private:
    Tensor upscale(const Tensor& image_tokens) const;

    ModelConfig cfg_;
    ImageEncoder image_encoder_;
    PromptEncoder prompt_encoder_;
    MaskDecoder mask_decoder_;
    std::optional<InjectionPlan> injection_;
    std::shared_ptr<std::atomic<std::uint64_t>> forward_calls_;
};

}  // namespace samlp
