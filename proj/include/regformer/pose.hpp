// SPDX-License-Identifier: Apache-2.0
//
// Pose regression from motion embeddings and residual composition across
// pyramid layers. Quaternions are stored (w, x, y, z).

#pragma once

#include "regformer/nn.hpp"
#include "regformer/pointcloud.hpp"
#include "regformer/tensor.hpp"

#include <vector>

namespace regformer {

/// Differentiable pose: q is [4], t is [3].
struct PoseTensor {
    Tensor q;
    Tensor t;

    Pose value() const;
    PoseTensor detach() const { return {q.detach(), t.detach()}; }
};

PoseTensor constant_pose(const Pose& p);

Tensor quat_multiply(const Tensor& a, const Tensor& b);  // Hamilton product of [4] tensors
Tensor quat_conjugate(const Tensor& q);
/// Imaginary part of q [0, v] q*, for a unit q.
Tensor quat_rotate(const Tensor& q, const Tensor& v);

/// q = dq * q_coarse, t = rotate(dq, t_coarse) + dt, then renormalized.
/// Throws std::invalid_argument if either quaternion is off unit length by more than 1e-3.
PoseTensor compose_refinement(const PoseTensor& delta, const PoseTensor& coarse);

/// Applies R(q) x + t to every coordinate.
std::vector<Vec3> warp_tokens(const std::vector<Vec3>& coords, const Pose& pose);

class PoseHead {
public:
    PoseHead() = default;
    explicit PoseHead(std::size_t channels, Rng& rng);

    /// softmax over tokens (per channel) of MLP(fe ⊕ f_source); [n, C].
    Tensor attention_weights(const Tensor& embedding, const Tensor& source_features) const;

    /// q = normalize(FC_1(pooled)), t = FC_2(pooled) with pooled = Σ_i fe_i ⊙ w_i.
    PoseTensor regress(const Tensor& embedding, const Tensor& weights) const;

    PoseTensor forward(const Tensor& embedding, const Tensor& source_features) const {
        return regress(embedding, attention_weights(embedding, source_features));
    }
    void collect(const std::string& prefix, NamedParameters& out) const;

    Linear w1, w2;   // weighting MLP, 2C -> C -> C
    Linear fc_rot;   // C -> 4, bias starts at the identity quaternion
    Linear fc_trans; // C -> 3
};

}  // namespace regformer
