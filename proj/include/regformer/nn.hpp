// SPDX-License-Identifier: Apache-2.0
//
// Trainable building blocks shared by the encoder, association and pose heads.

#pragma once

#include "regformer/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace regformer {

using Rng = std::mt19937_64;

using NamedParameters = std::vector<std::pair<std::string, Tensor>>;

/// Normal(0, std) truncated to +-2 std.
Tensor truncated_normal(Shape shape, double std, Rng& rng);

struct Linear {
    Tensor weight;  // [in, out]
    Tensor bias;    // [out]

    Linear() = default;
    Linear(std::size_t in, std::size_t out, Rng& rng, double std = 0.02);

    std::size_t in_features() const { return weight.dim(0); }
    std::size_t out_features() const { return weight.dim(1); }
    Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }
    void collect(const std::string& prefix, NamedParameters& out) const;
};

struct LayerNorm {
    Tensor gamma;
    Tensor beta;

    LayerNorm() = default;
    explicit LayerNorm(std::size_t width);

    Tensor operator()(const Tensor& x) const { return layer_norm(x, gamma, beta, 1e-5); }
    void collect(const std::string& prefix, NamedParameters& out) const;
};

/// Sets every parameter to zero (used by residual-identity tests).
void zero_parameters(const NamedParameters& params);

// Checkpoint layout (little endian):
//   magic "RGFC", u32 version, u32 count, then per tensor
//   u32 name_len, name bytes, u32 rank, u32 dims[rank], float32 data[prod(dims)].
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const NamedParameters& params);

/// Loads values into the given parameters by name. Every parameter must be
/// present with a matching shape; extra entries in the file are rejected.
void load_checkpoint(const std::filesystem::path& path, const NamedParameters& params);

}  // namespace regformer
