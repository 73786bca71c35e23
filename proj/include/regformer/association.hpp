// SPDX-License-Identifier: Apache-2.0
//
// Bijective association: cross-attention between the two frames, then
// geometric / similarity gathering into per-source-token motion embeddings.

#pragma once

#include "regformer/encoder.hpp"
#include "regformer/nn.hpp"
#include "regformer/pointcloud.hpp"
#include "regformer/tensor.hpp"

#include <array>
#include <utility>
#include <vector>

namespace regformer {

/// Valid tokens of one frame at one stage, in row-major grid order.
struct FrameTokens {
    Tensor features;                       // [n, C]
    std::vector<Vec3> coords;              // n centroids
    std::vector<std::size_t> grid_index;   // position in the stage grid
    std::vector<std::size_t> pool_index;   // n * kPoolSlots rows into `features`
    std::vector<double> pool_weight;       // n * kPoolSlots, zero for padding

    static constexpr std::size_t kPoolSlots = 9;
    std::size_t size() const { return coords.size(); }
};

/// Extracts the valid tokens and their 3x3 neighbourhoods (self plus valid
/// 8-neighbours; columns wrap around the cylinder, rows do not).
FrameTokens gather_valid_tokens(const TokenGrid& grid);

/// Same token set with different features (e.g. after cross-attention).
FrameTokens with_features(const FrameTokens& tokens, Tensor features);

/// Mean of each token's neighbourhood features, [n, C].
Tensor neighborhood_pool(const FrameTokens& tokens);

struct ConditionedFeatures {
    FrameTokens source;
    FrameTokens target;
};

struct CrossAttentionTrace {
    Tensor probs;    // [heads, n, m]
    Tensor readout;  // [n, C] attention output before W^O
};

class CrossAttention {
public:
    CrossAttention() = default;
    CrossAttention(std::size_t channels, std::size_t heads, Rng& rng);

    /// LN(query + MHA(query W^Q, context W^K, context W^V) W^O).
    Tensor attend(const Tensor& query, const Tensor& context, CrossAttentionTrace* trace = nullptr) const;

    /// Source attends to target and target attends to source with shared weights.
    std::pair<Tensor, Tensor> forward(const Tensor& source, const Tensor& target) const;
    void collect(const std::string& prefix, NamedParameters& out) const;

    std::size_t heads() const { return heads_; }
    Linear wq, wk, wv, wo;
    LayerNorm norm;

private:
    std::size_t heads_ = 1;
};

/// x ⊕ y ⊕ (x - y) ⊕ ‖x - y‖.
std::array<double, 10> relative_space_info(const Vec3& x, const Vec3& y);

/// Cosine similarity with the denominator floored at 1e-8, so zero vectors give 0.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

/// Candidate target rows for every source token, n * per_source entries.
struct Candidates {
    std::size_t per_source = 0;
    std::vector<std::size_t> index;
    bool clamped = false;  // requested k exceeded m
};

Candidates all_candidates(std::size_t n, std::size_t m);

/// k nearest target coordinates per source coordinate; ties go to the lower index.
Candidates knn_candidates(const std::vector<Vec3>& source, const std::vector<Vec3>& target, std::size_t k);

struct EmbeddingTrace {
    Tensor scores;   // L, [n, k, C]
    Tensor weights;  // per-channel softmax over candidates, [n, k, C]
};

/// Shared 3-layer MLP over f_i ⊕ cf_k ⊕ r ⊕ s (width 2C + 12), ReLU between layers,
/// followed by per-channel attentive pooling over the candidates.
class MotionEmbedder {
public:
    MotionEmbedder() = default;
    MotionEmbedder(std::size_t channels, Rng& rng);

    Tensor embed(const FrameTokens& source, const std::vector<Vec3>& source_coords, const FrameTokens& target,
                 const Candidates& candidates, EmbeddingTrace* trace = nullptr) const;
    void collect(const std::string& prefix, NamedParameters& out) const;

    Linear l1, l2, l3;
};

/// Every source token against every target token.
Tensor all_to_all_embedding(const MotionEmbedder& mlp, const ConditionedFeatures& cond,
                            EmbeddingTrace* trace = nullptr);

/// Candidates restricted to the k nearest targets of each (already warped) source coordinate.
/// k > m is clamped to m.
Tensor knn_embedding(const MotionEmbedder& mlp, const FrameTokens& source, const std::vector<Vec3>& warped_coords,
                     const FrameTokens& target, std::size_t k, EmbeddingTrace* trace = nullptr);

}  // namespace regformer
