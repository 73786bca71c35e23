// SPDX-License-Identifier: Apache-2.0
//
// End-to-end registration network: shared encoder for both frames, bijective
// association on the coarsest stage, then warp / kNN gather / residual pose on
// every finer stage.

#pragma once

#include "regformer/association.hpp"
#include "regformer/encoder.hpp"
#include "regformer/pose.hpp"
#include "regformer/projection.hpp"

#include <cstdint>
#include <vector>

namespace regformer {

struct ModelConfig {
    GridPreset preset = GridPreset::kitti64x1792;
    ProjectionGrid custom_grid;  // used when preset == custom
    EncoderConfig encoder;
    bool use_cross_attention = true;
    bool all_to_all = true;  // false: the coarsest layer also uses kNN candidates
    std::size_t knn = 16;

    ProjectionGrid grid() const { return build_default_grid(preset, custom_grid); }

    /// Desk-scale configuration: 16x64 grid, C = 16, 2x4 patches.
    static ModelConfig toy();
};

struct FrameInput {
    Projection projection;
};

FrameInput prepare_frame(const PointCloud& pc, const ProjectionGrid& grid);

struct LayerPose {
    std::size_t layer = 0;
    PoseTensor pose;
};

struct ForwardOutput {
    std::vector<LayerPose> layers;  // coarsest first; back() is layer 0, the final estimate
    const PoseTensor& final_pose() const { return layers.back().pose; }
};

class RegFormer {
public:
    RegFormer() = default;
    RegFormer(const ModelConfig& cfg, std::uint64_t seed);

    ForwardOutput forward(const FrameInput& source, const FrameInput& target) const;

    NamedParameters parameters() const;
    const ModelConfig& config() const { return cfg_; }
    const PointSwinEncoder& encoder() const { return encoder_; }

private:
    ModelConfig cfg_;
    PointSwinEncoder encoder_;
    CrossAttention cross_;
    std::vector<MotionEmbedder> embedders_;  // indexed by layer
    std::vector<PoseHead> heads_;            // indexed by layer
};

}  // namespace regformer
