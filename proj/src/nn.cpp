#include "samlp/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace samlp {

const char* to_string(Component c) {
    switch (c) {
        case Component::image_encoder: return "image_encoder";
        case Component::prompt_encoder: return "prompt_encoder";
        case Component::mask_decoder: return "mask_decoder";
    }
    return "?";
}

Linear::Linear(std::int64_t in, std::int64_t out, Rng& rng) : weight({in, out}), bias({out}) {
    const float bound = 1.0f / std::sqrt(static_cast<float>(in));
    std::normal_distribution<float> w(0.0f, bound);
    std::uniform_real_distribution<float> b(-bound, bound);
    for (auto& v : weight.values()) v = w(rng);
    for (auto& v : bias.values()) v = b(rng);
}

Tensor Linear::forward(const Tensor& x) const {
    auto y = ops::add_row(ops::matmul(x, weight), bias);
    if (lora) y = ops::add(y, lora_delta(*lora, x));
    return y;
}

void Linear::visit(const std::string& prefix, Component c, const ParamVisitor& f) {
    f(prefix + ".weight", weight, c, ParamRole::base);
    f(prefix + ".bias", bias, c, ParamRole::base);
    if (lora) {
        f(prefix + ".lora_A", lora->A, c, ParamRole::lora_a);
        f(prefix + ".lora_B", lora->B, c, ParamRole::lora_b);
    }
}

LayerNorm::LayerNorm(std::int64_t dim) : gamma({dim}, 1.0f), beta({dim}, 0.0f) {}

void LayerNorm::visit(const std::string& prefix, Component c, const ParamVisitor& f) {
    f(prefix + ".weight", gamma, c, ParamRole::base);
    f(prefix + ".bias", beta, c, ParamRole::base);
}

Mlp::Mlp(std::int64_t in, std::int64_t hidden, std::int64_t out, int num_layers, Activation a, Rng& rng) : act(a) {
    if (num_layers < 1) throw std::invalid_argument("Mlp: need at least one layer");
    for (int i = 0; i < num_layers; ++i) {
        const auto li = i == 0 ? in : hidden;
        const auto lo = i + 1 == num_layers ? out : hidden;
        layers.emplace_back(li, lo, rng);
    }
}

Tensor Mlp::forward(Tensor x) const {
    for (std::size_t i = 0; i < layers.size(); ++i) {
        x = layers[i].forward(x);
        if (i + 1 < layers.size()) x = act == Activation::relu ? ops::relu(x) : ops::gelu(x);
    }
    return x;
}

void Mlp::visit(const std::string& prefix, Component c, const ParamVisitor& f) {
    for (std::size_t i = 0; i < layers.size(); ++i) layers[i].visit(prefix + ".layers." + std::to_string(i), c, f);
}

Attention::Attention(std::int64_t dim, std::int64_t h, std::int64_t downsample, Rng& rng)
    : q_proj(dim, dim / downsample, rng),
      k_proj(dim, dim / downsample, rng),
      v_proj(dim, dim / downsample, rng),
      out_proj(dim / downsample, dim, rng),
      heads(h) {
    if (dim % downsample != 0 || (dim / downsample) % h != 0)
        throw std::invalid_argument("Attention: internal width must divide evenly into heads");
}

Tensor Attention::forward(const Tensor& q, const Tensor& k, const Tensor& v) const {
    const auto qp = q_proj.forward(q);
    const auto kp = k_proj.forward(k);
    const auto vp = v_proj.forward(v);
    const auto head_dim = internal_dim() / heads;
    const float inv_sqrt = 1.0f / std::sqrt(static_cast<float>(head_dim));
    std::vector<Tensor> outs;
    outs.reserve(static_cast<std::size_t>(heads));
    for (std::int64_t h = 0; h < heads; ++h) {
        const auto c0 = h * head_dim, c1 = c0 + head_dim;
        auto scores = ops::scale(ops::matmul_nt(ops::slice_cols(qp, c0, c1), ops::slice_cols(kp, c0, c1)), inv_sqrt);
        outs.push_back(ops::matmul(ops::softmax_rows(scores), ops::slice_cols(vp, c0, c1)));
    }
    return out_proj.forward(heads == 1 ? outs.front() : ops::concat_cols(outs));
}

void Attention::visit(const std::string& prefix, Component c, const ParamVisitor& f) {
    q_proj.visit(prefix + ".q_proj", c, f);
    k_proj.visit(prefix + ".k_proj", c, f);
    v_proj.visit(prefix + ".v_proj", c, f);
    out_proj.visit(prefix + ".out_proj", c, f);
}

std::vector<float> sinusoidal_encoding(float u, float v, std::int64_t dim, std::int64_t grid) {
    if (dim % 4 != 0) throw std::invalid_argument("sinusoidal_encoding: dim must be divisible by 4");
    const auto quarter = dim / 4;
    std::vector<float> out(static_cast<std::size_t>(dim));
    // Positions are expressed in grid-cell units so the lowest frequency
    // spans the full image and the highest resolves single cells.
    const double px = static_cast<double>(u) * static_cast<double>(grid);
    const double py = static_cast<double>(v) * static_cast<double>(grid);
    for (std::int64_t i = 0; i < quarter; ++i) {
        const double freq = M_PI / std::pow(static_cast<double>(grid), static_cast<double>(i) / static_cast<double>(quarter));
        const auto base = static_cast<std::size_t>(4 * i);
        out[base + 0] = static_cast<float>(std::sin(px * freq));
        out[base + 1] = static_cast<float>(std::cos(px * freq));
        out[base + 2] = static_cast<float>(std::sin(py * freq));
        out[base + 3] = static_cast<float>(std::cos(py * freq));
    }
    return out;
}

Tensor grid_encoding(std::int64_t grid, std::int64_t dim) {
    Tensor t({grid * grid, dim});
    for (std::int64_t y = 0; y < grid; ++y)
        for (std::int64_t x = 0; x < grid; ++x) {
            const auto enc = sinusoidal_encoding((static_cast<float>(x) + 0.5f) / static_cast<float>(grid),
                                                 (static_cast<float>(y) + 0.5f) / static_cast<float>(grid), dim, grid);
            std::copy(enc.begin(), enc.end(), t.values().begin() + (y * grid + x) * dim);
        }
    return t;
}

}  // namespace samlp
