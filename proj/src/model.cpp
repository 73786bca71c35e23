// SPDX-License-Identifier: Apache-2.0

#include "regformer/model.hpp"

#include <algorithm>
#include <stdexcept>

namespace regformer {

ModelConfig ModelConfig::toy() {
    ModelConfig cfg;
    cfg.preset = GridPreset::desk16x64;
    cfg.encoder.channels = 16;
    cfg.encoder.patch_rows = 2;
    cfg.encoder.patch_cols = 4;
    return cfg;
}

FrameInput prepare_frame(const PointCloud& pc, const ProjectionGrid& grid) {
    FrameInput in{project_cylindrical(pc, grid)};
    if (in.projection.mask.valid_count() == 0) {
        throw std::invalid_argument("frame '" + pc.frame_id + "' has no points inside the projection grid");
    }
    return in;
}

RegFormer::RegFormer(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    Rng rng(seed);
    const ProjectionGrid grid = cfg.grid();
    encoder_ = PointSwinEncoder(cfg.encoder, grid.height, grid.width, rng);
    const std::size_t top = cfg.encoder.stages;
    cross_ = CrossAttention(cfg.encoder.channels_at(top), cfg.encoder.heads_at(top), rng);
    for (std::size_t l = 0; l <= top; ++l) {
        embedders_.emplace_back(cfg.encoder.channels_at(l), rng);
        heads_.emplace_back(cfg.encoder.channels_at(l), rng);
    }
}

ForwardOutput RegFormer::forward(const FrameInput& source, const FrameInput& target) const {
    const auto src_grids = encoder_.encode(source.projection.image, source.projection.mask);
    const auto tgt_grids = encoder_.encode(target.projection.image, target.projection.mask);
    const std::size_t top = cfg_.encoder.stages;

    auto tokens_at = [](const TokenGrid& g, const char* frame) {
        FrameTokens t = gather_valid_tokens(g);
        if (t.size() == 0) {
            throw std::invalid_argument(std::string(frame) + " frame has no valid tokens at stage " +
                                        std::to_string(g.stage));
        }
        return t;
    };

    ForwardOutput out;
    const FrameTokens src_top = tokens_at(src_grids[top], "source");
    const FrameTokens tgt_top = tokens_at(tgt_grids[top], "target");
    ConditionedFeatures cond{src_top, tgt_top};
    if (cfg_.use_cross_attention) {
        auto [cs, ct] = cross_.forward(src_top.features, tgt_top.features);
        cond = {with_features(src_top, cs), with_features(tgt_top, ct)};
    }
    const Tensor fe_top =
        cfg_.all_to_all
            ? all_to_all_embedding(embedders_[top], cond)
            : knn_embedding(embedders_[top], cond.source, cond.source.coords, cond.target,
                            std::min(cfg_.knn, cond.target.size()));
    PoseTensor pose = heads_[top].forward(fe_top, src_top.features);
    out.layers.push_back({top, pose});

    for (std::size_t l = top; l-- > 0;) {
        const FrameTokens src = tokens_at(src_grids[l], "source");
        const FrameTokens tgt = tokens_at(tgt_grids[l], "target");
        // Warping uses the current estimate as a constant.
        const std::vector<Vec3> warped = warp_tokens(src.coords, pose.value());
        const Tensor fe = knn_embedding(embedders_[l], src, warped, tgt, std::min(cfg_.knn, tgt.size()));
        pose = compose_refinement(heads_[l].forward(fe, src.features), pose);
        out.layers.push_back({l, pose});
    }
    return out;
}

NamedParameters RegFormer::parameters() const {
    NamedParameters out;
    encoder_.collect("encoder", out);
    cross_.collect("bat.cross", out);
    for (std::size_t l = 0; l < embedders_.size(); ++l) {
        embedders_[l].collect("layer" + std::to_string(l) + ".gather", out);
        heads_[l].collect("layer" + std::to_string(l) + ".pose", out);
    }
    return out;
}

}  // namespace regformer
