#pragma once

#include <cstdint>
#include <random>

#include "samlp/tensor.hpp"

namespace samlp {

using Rng = std::mt19937_64;

/// Low-rank update shadowing one frozen projection W0 [d x k]:
///   h = x W0 + scale * (x B) A,  B [d x r], A [r x k].
struct LoraLayer {
    Tensor B;
    Tensor A;
    float scale = 1.0f;

    std::int64_t rank() const { return A.dim(0); }
    std::int64_t in_dim() const { return B.dim(0); }
    std::int64_t out_dim() const { return A.dim(1); }
    std::int64_t parameter_count() const { return B.size() + A.size(); }
};

inline constexpr float kDefaultLoraSigma = 5.0f;

/// B starts at zero, A ~ N(0, sigma^2). Throws std::invalid_argument when
/// rank is outside [1, min(d, k)]; logs a warning above min(d, k) / 4.
LoraLayer make_lora(std::int64_t d, std::int64_t k, std::int64_t rank, Rng& rng,
                    float sigma = kDefaultLoraSigma);

/// The adapter contribution scale * (x B) A, without forming B A.
Tensor lora_delta(const LoraLayer& layer, const Tensor& x);

Tensor lora_forward(const LoraLayer& layer, const Tensor& w0, const Tensor& x);

/// W0 + scale * B A. Never records a graph.
Tensor merge_weights(const Tensor& w0, const LoraLayer& layer);

}  // namespace samlp
