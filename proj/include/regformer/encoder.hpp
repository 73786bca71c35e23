// SPDX-License-Identifier: Apache-2.0
//
// Hierarchical point Swin encoder over cylindrical pseudo images: patch
// embedding, masked (shifted-)window self-attention, and 2x2 patch merging.

#pragma once

#include "regformer/nn.hpp"
#include "regformer/projection.hpp"
#include "regformer/tensor.hpp"

#include <cstddef>
#include <vector>

namespace regformer {

struct EncoderConfig {
    std::size_t channels = 32;  // C; stage l uses C * 2^l
    std::size_t window = 4;
    std::size_t shift = 2;
    std::size_t patch_rows = 4;
    std::size_t patch_cols = 8;
    std::size_t stages = 3;
    std::size_t head_width = 32;
    std::size_t mlp_ratio = 4;
    bool use_mask = true;

    std::size_t channels_at(std::size_t stage) const { return channels << stage; }
    std::size_t heads_at(std::size_t stage) const;
};

/// Feature grid of one stage with its token mask and token centroids.
struct TokenGrid {
    std::size_t stage = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;
    Tensor features;  // [rows * cols, C_l], row-major token order
    ProjectionMask mask;
    TokenCentroids centroids;

    std::size_t channels() const { return features.dim(1); }
    std::size_t size() const { return rows * cols; }
};

/// Partition of a token grid into (optionally cyclically shifted) windows.
/// A window that spans a whole axis is never shifted along that axis; windows
/// wider than the grid are clamped to it.
struct WindowLayout {
    std::size_t rows = 0, cols = 0;
    std::size_t win_rows = 0, win_cols = 0;
    std::size_t shift_rows = 0, shift_cols = 0;

    std::vector<std::size_t> gather;   // window-major slot -> token index
    std::vector<std::size_t> scatter;  // token index -> window-major slot
    std::vector<std::size_t> region;   // per window-major slot; vertical shift seam labels

    std::size_t windows() const { return (rows / win_rows) * (cols / win_cols); }
    std::size_t tokens_per_window() const { return win_rows * win_cols; }
};

WindowLayout make_window_layout(std::size_t rows, std::size_t cols, std::size_t window, std::size_t shift,
                                bool shifted);

/// Relative-position table index for every (query, key) slot pair of a window.
std::vector<std::size_t> relative_position_index(std::size_t win_rows, std::size_t win_cols);

/// Additive attention mask [windows, 1, T, T]: key masking plus shift-seam masking.
Tensor window_attention_mask(const WindowLayout& layout, const ProjectionMask& mask, bool use_mask);

struct AttentionTrace {
    Tensor probs;  // [windows, heads, T, T]
};

class WindowAttention {
public:
    WindowAttention() = default;
    WindowAttention(std::size_t channels, std::size_t heads, std::size_t win_rows, std::size_t win_cols, Rng& rng);

    Tensor forward(const Tensor& x, const WindowLayout& layout, const ProjectionMask& mask, bool use_mask,
                   AttentionTrace* trace = nullptr) const;
    void collect(const std::string& prefix, NamedParameters& out) const;

    std::size_t heads() const { return heads_; }

    Linear qkv;         // C -> 3C, laid out as [Q | K | V], heads contiguous inside each
    Linear proj;        // W^O
    Tensor bias_table;  // [(2 wr - 1)(2 wc - 1), heads]

private:
    std::size_t heads_ = 1;
    std::vector<std::size_t> rel_index_;
};

class SwinBlock {
public:
    SwinBlock() = default;
    SwinBlock(std::size_t channels, std::size_t heads, std::size_t mlp_ratio, WindowLayout layout, Rng& rng);

    Tensor forward(const Tensor& x, const ProjectionMask& mask, bool use_mask, AttentionTrace* trace = nullptr) const;
    void collect(const std::string& prefix, NamedParameters& out) const;

    const WindowLayout& layout() const { return layout_; }
    WindowAttention attn;
    LayerNorm norm1, norm2;
    Linear fc1, fc2;

private:
    WindowLayout layout_;
};

/// One W-MSA block followed by one SW-MSA block.
class EncoderStage {
public:
    EncoderStage() = default;
    EncoderStage(const EncoderConfig& cfg, std::size_t stage, std::size_t rows, std::size_t cols, Rng& rng);

    TokenGrid forward(const TokenGrid& grid, bool use_mask) const;
    void collect(const std::string& prefix, NamedParameters& out) const;

    SwinBlock regular;
    SwinBlock shifted;
};

class PatchEmbed {
public:
    PatchEmbed() = default;
    PatchEmbed(std::size_t patch_rows, std::size_t patch_cols, std::size_t channels, Rng& rng);

    TokenGrid forward(const PseudoImage& img, const ProjectionMask& mask) const;
    void collect(const std::string& prefix, NamedParameters& out) const;

    Linear proj;

private:
    std::size_t patch_rows_ = 4, patch_cols_ = 8;
};

class PatchMerge {
public:
    PatchMerge() = default;
    PatchMerge(std::size_t channels, Rng& rng);

    TokenGrid forward(const TokenGrid& grid) const;
    void collect(const std::string& prefix, NamedParameters& out) const;

    Linear reduce;  // 4C -> 2C
};

class PointSwinEncoder {
public:
    PointSwinEncoder() = default;
    /// Builds the encoder for images of `height` x `width` pixels.
    PointSwinEncoder(const EncoderConfig& cfg, std::size_t height, std::size_t width, Rng& rng);

    /// Grids for stages 0..stages; stage 0 is the patch embedding.
    std::vector<TokenGrid> encode(const PseudoImage& img, const ProjectionMask& mask) const;
    void collect(const std::string& prefix, NamedParameters& out) const;

    const EncoderConfig& config() const { return cfg_; }
    const EncoderStage& stage(std::size_t l) const { return stages_.at(l - 1); }

private:
    EncoderConfig cfg_;
    std::size_t height_ = 0, width_ = 0;
    PatchEmbed embed_;
    std::vector<PatchMerge> merges_;
    std::vector<EncoderStage> stages_;
};

}  // namespace regformer
