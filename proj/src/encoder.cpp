// SPDX-License-Identifier: Apache-2.0

#include "regformer/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace regformer {

std::size_t EncoderConfig::heads_at(std::size_t stage) const {
    return std::max<std::size_t>(1, channels_at(stage) / std::max<std::size_t>(1, head_width));
}

WindowLayout make_window_layout(std::size_t rows, std::size_t cols, std::size_t window, std::size_t shift,
                                bool shifted) {
    if (window == 0) throw std::invalid_argument("window size must be positive");
    if (shift >= window) {
        throw std::invalid_argument("shift size " + std::to_string(shift) + " must be smaller than window size " +
                                    std::to_string(window));
    }
    WindowLayout w;
    w.rows = rows;
    w.cols = cols;
    w.win_rows = std::min(window, rows);
    w.win_cols = std::min(window, cols);
    if (rows == 0 || cols == 0 || rows % w.win_rows != 0 || cols % w.win_cols != 0) {
        throw ShapeError("window " + std::to_string(w.win_rows) + "x" + std::to_string(w.win_cols) +
                         " does not divide token grid " + std::to_string(rows) + "x" + std::to_string(cols));
    }
    w.shift_rows = shifted && w.win_rows < rows ? shift : 0;
    w.shift_cols = shifted && w.win_cols < cols ? shift : 0;

    const std::size_t n = rows * cols;
    const std::size_t wins_c = cols / w.win_cols;
    w.gather.resize(n);
    w.scatter.resize(n);
    w.region.resize(n);
    for (std::size_t slot = 0; slot < n; ++slot) {
        const std::size_t t = w.tokens_per_window();
        const std::size_t win = slot / t, inside = slot % t;
        const std::size_t r = (win / wins_c) * w.win_rows + inside / w.win_cols;
        const std::size_t c = (win % wins_c) * w.win_cols + inside % w.win_cols;
        // Rolling by -shift: shifted position (r, c) holds token (r + s_r, c + s_c).
        const std::size_t token = ((r + w.shift_rows) % rows) * cols + (c + w.shift_cols) % cols;
        w.gather[slot] = token;
        w.scatter[token] = slot;
        // Columns wrap seamlessly on the cylinder; rows that wrapped across the
        // top/bottom seam must not attend to their new neighbours.
        std::size_t label = 0;
        if (w.shift_rows > 0) {
            if (r >= rows - w.shift_rows) {
                label = 2;
            } else if (r >= rows - w.win_rows) {
                label = 1;
            }
        }
        w.region[slot] = label;
    }
    return w;
}

std::vector<std::size_t> relative_position_index(std::size_t win_rows, std::size_t win_cols) {
    const std::size_t t = win_rows * win_cols;
    std::vector<std::size_t> idx(t * t);
    for (std::size_t a = 0; a < t; ++a) {
        for (std::size_t b = 0; b < t; ++b) {
            const std::size_t dr = a / win_cols + win_rows - 1 - b / win_cols;
            const std::size_t dc = a % win_cols + win_cols - 1 - b % win_cols;
            idx[a * t + b] = dr * (2 * win_cols - 1) + dc;
        }
    }
    return idx;
}

Tensor window_attention_mask(const WindowLayout& layout, const ProjectionMask& mask, bool use_mask) {
    const std::size_t nw = layout.windows(), t = layout.tokens_per_window();
    if (mask.rows != layout.rows || mask.cols != layout.cols) {
        throw ShapeError("token mask " + std::to_string(mask.rows) + "x" + std::to_string(mask.cols) +
                         " does not match grid " + std::to_string(layout.rows) + "x" + std::to_string(layout.cols));
    }
    std::vector<double> values(nw * t * t, 0.0);
    for (std::size_t w = 0; w < nw; ++w) {
        for (std::size_t a = 0; a < t; ++a) {
            for (std::size_t b = 0; b < t; ++b) {
                const std::size_t sa = w * t + a, sb = w * t + b;
                const bool seam = layout.region[sa] != layout.region[sb];
                const bool masked_key = use_mask && !mask.valid(layout.gather[sb]);
                if (seam || masked_key) values[(w * t + a) * t + b] = kMaskValue;
            }
        }
    }
    return Tensor({nw, 1, t, t}, std::move(values));
}

// ---------------------------------------------------------------- attention

WindowAttention::WindowAttention(std::size_t channels, std::size_t heads, std::size_t win_rows, std::size_t win_cols,
                                 Rng& rng)
    : qkv(channels, 3 * channels, rng),
      proj(channels, channels, rng),
      bias_table(Tensor::zeros({(2 * win_rows - 1) * (2 * win_cols - 1), heads}, true)),
      heads_(heads),
      rel_index_(relative_position_index(win_rows, win_cols)) {
    if (heads == 0 || channels % heads != 0) {
        throw std::invalid_argument("channels " + std::to_string(channels) + " not divisible by " +
                                    std::to_string(heads) + " heads");
    }
}

Tensor WindowAttention::forward(const Tensor& x, const WindowLayout& layout, const ProjectionMask& mask,
                                bool use_mask, AttentionTrace* trace) const {
    const std::size_t n = layout.rows * layout.cols;
    if (x.rank() != 2 || x.dim(0) != n) {
        throw ShapeError("window attention input " + shape_string(x.shape()) + " does not match grid of " +
                         std::to_string(n) + " tokens");
    }
    const std::size_t c = x.dim(1), h = heads_, d = c / h;
    const std::size_t nw = layout.windows(), t = layout.tokens_per_window();
    if (rel_index_.size() != t * t) throw ShapeError("window layout does not match the attention's bias table");

    Tensor xw = index_select(x, 0, layout.gather);
    Tensor packed = permute(reshape(qkv(xw), {nw, t, 3, h, d}), {2, 0, 3, 1, 4});  // [3, nw, h, t, d]
    Tensor q = scale(reshape(slice(packed, 0, 0, 1), {nw, h, t, d}), 1.0 / std::sqrt(static_cast<double>(d)));
    Tensor k = reshape(slice(packed, 0, 1, 1), {nw, h, t, d});
    Tensor v = reshape(slice(packed, 0, 2, 1), {nw, h, t, d});

    Tensor logits = matmul(q, transpose(k, 2, 3));  // [nw, h, t, t]
    Tensor bias = reshape(transpose(index_select(bias_table, 0, rel_index_), 0, 1), {h, t, t});
    Tensor probs = softmax(logits + bias + window_attention_mask(layout, mask, use_mask), 3);
    if (trace) trace->probs = probs;

    Tensor out = reshape(permute(matmul(probs, v), {0, 2, 1, 3}), {n, c});
    out = index_select(proj(out), 0, layout.scatter);
    if (use_mask) {
        std::vector<double> keep(n);
        for (std::size_t i = 0; i < n; ++i) keep[i] = mask.valid(i) ? 1.0 : 0.0;
        out = out * Tensor({n, 1}, std::move(keep));
    }
    return out;
}

void WindowAttention::collect(const std::string& prefix, NamedParameters& out) const {
    qkv.collect(prefix + ".qkv", out);
    proj.collect(prefix + ".proj", out);
    out.emplace_back(prefix + ".relative_bias", bias_table);
}

SwinBlock::SwinBlock(std::size_t channels, std::size_t heads, std::size_t mlp_ratio, WindowLayout layout, Rng& rng)
    : attn(channels, heads, layout.win_rows, layout.win_cols, rng),
      norm1(channels),
      norm2(channels),
      fc1(channels, mlp_ratio * channels, rng),
      fc2(mlp_ratio * channels, channels, rng),
      layout_(std::move(layout)) {}

Tensor SwinBlock::forward(const Tensor& x, const ProjectionMask& mask, bool use_mask, AttentionTrace* trace) const {
    Tensor h = x + attn.forward(norm1(x), layout_, mask, use_mask, trace);
    return h + fc2(gelu(fc1(norm2(h))));
}

void SwinBlock::collect(const std::string& prefix, NamedParameters& out) const {
    norm1.collect(prefix + ".norm1", out);
    attn.collect(prefix + ".attn", out);
    norm2.collect(prefix + ".norm2", out);
    fc1.collect(prefix + ".mlp.fc1", out);
    fc2.collect(prefix + ".mlp.fc2", out);
}

EncoderStage::EncoderStage(const EncoderConfig& cfg, std::size_t stage, std::size_t rows, std::size_t cols, Rng& rng)
    : regular(cfg.channels_at(stage), cfg.heads_at(stage), cfg.mlp_ratio,
              make_window_layout(rows, cols, cfg.window, cfg.shift, false), rng),
      shifted(cfg.channels_at(stage), cfg.heads_at(stage), cfg.mlp_ratio,
              make_window_layout(rows, cols, cfg.window, cfg.shift, true), rng) {}

TokenGrid EncoderStage::forward(const TokenGrid& grid, bool use_mask) const {
    TokenGrid out = grid;
    out.features = shifted.forward(regular.forward(grid.features, grid.mask, use_mask), grid.mask, use_mask);
    return out;
}

void EncoderStage::collect(const std::string& prefix, NamedParameters& out) const {
    regular.collect(prefix + ".wmsa", out);
    shifted.collect(prefix + ".swmsa", out);
}

// ---------------------------------------------------------------- embedding / merging

PatchEmbed::PatchEmbed(std::size_t patch_rows, std::size_t patch_cols, std::size_t channels, Rng& rng)
    : proj(patch_rows * patch_cols * 3, channels, rng), patch_rows_(patch_rows), patch_cols_(patch_cols) {}

TokenGrid PatchEmbed::forward(const PseudoImage& img, const ProjectionMask& mask) const {
    if (img.height() % patch_rows_ != 0 || img.width() % patch_cols_ != 0) {
        const std::size_t pad_r = (patch_rows_ - img.height() % patch_rows_) % patch_rows_;
        const std::size_t pad_c = (patch_cols_ - img.width() % patch_cols_) % patch_cols_;
        throw ShapeError("pseudo image " + std::to_string(img.height()) + "x" + std::to_string(img.width()) +
                         " is not divisible by patch " + std::to_string(patch_rows_) + "x" +
                         std::to_string(patch_cols_) + "; pad by " + std::to_string(pad_r) + " rows and " +
                         std::to_string(pad_c) + " columns");
    }
    TokenGrid g;
    g.stage = 0;
    g.rows = img.height() / patch_rows_;
    g.cols = img.width() / patch_cols_;
    const std::size_t width = patch_rows_ * patch_cols_ * 3;
    std::vector<double> patches(g.size() * width);
    for (std::size_t r = 0; r < img.height(); ++r) {
        for (std::size_t c = 0; c < img.width(); ++c) {
            const std::size_t token = (r / patch_rows_) * g.cols + c / patch_cols_;
            const std::size_t inner = ((r % patch_rows_) * patch_cols_ + c % patch_cols_) * 3;
            const Vec3 p = img.at(r, c);
            std::copy(p.begin(), p.end(), patches.begin() + static_cast<std::ptrdiff_t>(token * width + inner));
        }
    }
    g.features = proj(Tensor({g.size(), width}, std::move(patches)));
    g.mask = downsample_mask(mask, patch_rows_, patch_cols_);
    g.mask.stage = 0;
    g.centroids = token_centroids(img, mask, patch_rows_, patch_cols_);
    return g;
}

void PatchEmbed::collect(const std::string& prefix, NamedParameters& out) const { proj.collect(prefix + ".proj", out); }

PatchMerge::PatchMerge(std::size_t channels, Rng& rng) : reduce(4 * channels, 2 * channels, rng) {}

TokenGrid PatchMerge::forward(const TokenGrid& grid) const {
    if (grid.rows % 2 != 0 || grid.cols % 2 != 0) {
        throw ShapeError("cannot merge a " + std::to_string(grid.rows) + "x" + std::to_string(grid.cols) +
                         " token grid (dimensions must be even)");
    }
    TokenGrid g;
    g.stage = grid.stage + 1;
    g.rows = grid.rows / 2;
    g.cols = grid.cols / 2;
    std::vector<std::size_t> idx;
    idx.reserve(grid.size());
    for (std::size_t r = 0; r < g.rows; ++r) {
        for (std::size_t c = 0; c < g.cols; ++c) {
            const std::size_t r0 = 2 * r, c0 = 2 * c;
            idx.push_back(r0 * grid.cols + c0);
            idx.push_back((r0 + 1) * grid.cols + c0);
            idx.push_back(r0 * grid.cols + c0 + 1);
            idx.push_back((r0 + 1) * grid.cols + c0 + 1);
        }
    }
    const std::size_t c = grid.channels();
    g.features = reduce(reshape(index_select(grid.features, 0, idx), {g.size(), 4 * c}));
    g.mask = downsample_mask(grid.mask, 2, 2);
    g.mask.stage = g.stage;
    g.centroids = merge_centroids(grid.centroids);
    return g;
}

void PatchMerge::collect(const std::string& prefix, NamedParameters& out) const {
    reduce.collect(prefix + ".reduce", out);
}

PointSwinEncoder::PointSwinEncoder(const EncoderConfig& cfg, std::size_t height, std::size_t width, Rng& rng)
    : cfg_(cfg), height_(height), width_(width) {
    if (cfg.patch_rows == 0 || cfg.patch_cols == 0 || height % cfg.patch_rows != 0 || width % cfg.patch_cols != 0) {
        throw ShapeError("image " + std::to_string(height) + "x" + std::to_string(width) +
                         " is not divisible by patch " + std::to_string(cfg.patch_rows) + "x" +
                         std::to_string(cfg.patch_cols));
    }
    embed_ = PatchEmbed(cfg.patch_rows, cfg.patch_cols, cfg.channels, rng);
    std::size_t rows = height / cfg.patch_rows, cols = width / cfg.patch_cols;
    for (std::size_t l = 1; l <= cfg.stages; ++l) {
        if (rows % 2 != 0 || cols % 2 != 0) {
            throw ShapeError("stage " + std::to_string(l) + " cannot merge a " + std::to_string(rows) + "x" +
                             std::to_string(cols) + " token grid");
        }
        merges_.emplace_back(cfg.channels_at(l - 1), rng);
        rows /= 2;
        cols /= 2;
        stages_.emplace_back(cfg, l, rows, cols, rng);
    }
}

std::vector<TokenGrid> PointSwinEncoder::encode(const PseudoImage& img, const ProjectionMask& mask) const {
    if (img.height() != height_ || img.width() != width_) {
        throw ShapeError("encoder built for " + std::to_string(height_) + "x" + std::to_string(width_) +
                         " images, got " + std::to_string(img.height()) + "x" + std::to_string(img.width()));
    }
    std::vector<TokenGrid> grids;
    grids.push_back(embed_.forward(img, mask));
    for (std::size_t l = 1; l <= cfg_.stages; ++l) {
        grids.push_back(stages_[l - 1].forward(merges_[l - 1].forward(grids.back()), cfg_.use_mask));
    }
    return grids;
}

void PointSwinEncoder::collect(const std::string& prefix, NamedParameters& out) const {
    embed_.collect(prefix + ".embed", out);
    for (std::size_t l = 1; l <= cfg_.stages; ++l) {
        merges_[l - 1].collect(prefix + ".merge" + std::to_string(l), out);
        stages_[l - 1].collect(prefix + ".stage" + std::to_string(l), out);
    }
}

}  // namespace regformer
