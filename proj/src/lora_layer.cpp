#include "samlp/lora_layer.hpp"

#include <algorithm>
#include <iostream>
#include <stdexcept>
#include <string>

namespace samlp {

LoraLayer make_lora(std::int64_t d, std::int64_t k, std::int64_t rank, Rng& rng, float sigma) {
    if (d < 1 || k < 1) throw std::invalid_argument("make_lora: dimensions must be positive");
    if (rank < 1) throw std::invalid_argument("make_lora: rank must be >= 1");
    if (rank > std::min(d, k))
        throw std::invalid_argument("make_lora: rank " + std::to_string(rank) + " exceeds min(d, k) = " +
                                    std::to_string(std::min(d, k)));
    if (rank * 4 > std::min(d, k))
        std::cerr << "warning: LoRA rank " << rank << " is not small relative to min(d, k) = " << std::min(d, k)
                  << '\n';

    LoraLayer layer;
    layer.B = Tensor::zeros({d, rank});
    layer.A = Tensor::zeros({rank, k});
    std::normal_distribution<float> normal(0.0f, sigma);
    for (auto& v : layer.A.values()) v = normal(rng);
    return layer;
}

Tensor lora_delta(const LoraLayer& layer, const Tensor& x) {
    auto delta = ops::matmul(ops::matmul(x, layer.B), layer.A);
    return layer.scale == 1.0f ? delta : ops::scale(delta, layer.scale);
}

Tensor lora_forward(const LoraLayer& layer, const Tensor& w0, const Tensor& x) {
    if (w0.rank() != 2 || w0.dim(0) != layer.in_dim() || w0.dim(1) != layer.out_dim())
        throw ShapeError("lora_forward: W0 " + shape_str(w0.shape()) + " does not match adapter " +
                         std::to_string(layer.in_dim()) + " x " + std::to_string(layer.out_dim()));
    return ops::add(ops::matmul(x, w0), lora_delta(layer, x));
}

Tensor merge_weights(const Tensor& w0, const LoraLayer& layer) {
    NoGradGuard no_grad;
    if (w0.rank() != 2 || w0.dim(0) != layer.in_dim() || w0.dim(1) != layer.out_dim())
        throw ShapeError("merge_weights: W0 " + shape_str(w0.shape()) + " does not match adapter");
    auto delta = ops::matmul(layer.B, layer.A);
    return ops::add(w0, layer.scale == 1.0f ? delta : ops::scale(delta, layer.scale)).detach();
}

}  // namespace samlp
