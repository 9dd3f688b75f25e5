#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "samlp/lora_layer.hpp"
#include "samlp/tensor.hpp"

namespace samlp {

enum class Component { image_encoder, prompt_encoder, mask_decoder };
enum class ParamRole { base, lora_a, lora_b };

const char* to_string(Component c);

/// Named handle to one parameter array. Shares storage with the module.
struct ParamRef {
    std::string path;
    Tensor tensor;
    Component component;
    ParamRole role;
};

using ParamList = std::vector<ParamRef>;
using ParamVisitor = std::function<void(const std::string& path, Tensor& t, Component c, ParamRole role)>;

struct Linear {
    Tensor weight;  // [in x out]
    Tensor bias;    // [out]
    std::optional<LoraLayer> lora;

    Linear() = default;
    Linear(std::int64_t in, std::int64_t out, Rng& rng);

    std::int64_t in_dim() const { return weight.dim(0); }
    std::int64_t out_dim() const { return weight.dim(1); }
    Tensor forward(const Tensor& x) const;
    void visit(const std::string& prefix, Component c, const ParamVisitor& f);
};

struct LayerNorm {
    Tensor gamma;
    Tensor beta;

    LayerNorm() = default;
    explicit LayerNorm(std::int64_t dim);
    Tensor forward(const Tensor& x) const { return ops::layer_norm_rows(x, gamma, beta); }
    void visit(const std::string& prefix, Component c, const ParamVisitor& f);
};

enum class Activation { relu, gelu };

/// Stack of linear layers with an activation between them (none after the last).
struct Mlp {
    std::vector<Linear> layers;
    Activation act = Activation::relu;

    Mlp() = default;
    Mlp(std::int64_t in, std::int64_t hidden, std::int64_t out, int num_layers, Activation act, Rng& rng);
    Tensor forward(Tensor x) const;
    void visit(const std::string& prefix, Component c, const ParamVisitor& f);
};

/// Multi-head attention with separate q/k/v/out projections. The internal
/// width may be smaller than the embedding width (cross-attention downsample).
struct Attention {
    Linear q_proj, k_proj, v_proj, out_proj;
    std::int64_t heads = 1;

    Attention() = default;
    Attention(std::int64_t dim, std::int64_t heads, std::int64_t downsample, Rng& rng);
    Attention(std::int64_t dim, std::int64_t heads, Rng& rng) : Attention(dim, heads, 1, rng) {}

    std::int64_t internal_dim() const { return q_proj.out_dim(); }
    Tensor forward(const Tensor& q, const Tensor& k, const Tensor& v) const;
    void visit(const std::string& prefix, Component c, const ParamVisitor& f);
};

/// An attention module found by a structural walk, with its module path.
struct AttentionSite {
    std::string path;
    Component component;
    Attention* attention;
};

/// Fixed sinusoidal features of a 2-D location given in [0, 1) units of the
/// image side. Shared by the image grid and point prompts so both live in the
/// same coordinate frame. Returns `dim` channels (dim divisible by 4).
std::vector<float> sinusoidal_encoding(float u, float v, std::int64_t dim, std::int64_t grid);

/// [grid*grid x dim] encoding of cell centres, row-major over (y, x).
Tensor grid_encoding(std::int64_t grid, std::int64_t dim);

}  // namespace samlp
