// SPDX-License-Identifier: Apache-2.0

#include "regformer/pose.hpp"

#include <cmath>
#include <stdexcept>

namespace regformer {

namespace {

Tensor part(const Tensor& q, std::size_t i) { return slice(q, 0, i, 1); }

void require_quaternion(const Tensor& q, const char* what) {
    if (q.rank() != 1 || q.dim(0) != 4) throw ShapeError(std::string(what) + ": expected [4], got " + shape_string(q.shape()));
}

double norm4(const Tensor& q) {
    const auto v = q.values();
    return std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2] + v[3] * v[3]);
}

}  // namespace

Pose PoseTensor::value() const {
    const auto qv = q.values();
    const auto tv = t.values();
    return Pose(Quaternion{qv[0], qv[1], qv[2], qv[3]}, Vec3{tv[0], tv[1], tv[2]});
}

PoseTensor constant_pose(const Pose& p) {
    return {Tensor::vector({p.q.w, p.q.x, p.q.y, p.q.z}), Tensor::vector({p.t[0], p.t[1], p.t[2]})};
}

Tensor quat_multiply(const Tensor& a, const Tensor& b) {
    require_quaternion(a, "quat_multiply");
    require_quaternion(b, "quat_multiply");
    const Tensor aw = part(a, 0), ax = part(a, 1), ay = part(a, 2), az = part(a, 3);
    const Tensor bw = part(b, 0), bx = part(b, 1), by = part(b, 2), bz = part(b, 3);
    return concat({aw * bw - ax * bx - ay * by - az * bz,
                   aw * bx + ax * bw + ay * bz - az * by,
                   aw * by - ax * bz + ay * bw + az * bx,
                   aw * bz + ax * by - ay * bx + az * bw},
                  0);
}

Tensor quat_conjugate(const Tensor& q) {
    require_quaternion(q, "quat_conjugate");
    return q * Tensor::vector({1.0, -1.0, -1.0, -1.0});
}

Tensor quat_rotate(const Tensor& q, const Tensor& v) {
    if (v.rank() != 1 || v.dim(0) != 3) throw ShapeError("quat_rotate: expected [3], got " + shape_string(v.shape()));
    const Tensor pure = concat({Tensor::vector({0.0}), v}, 0);
    return slice(quat_multiply(quat_multiply(q, pure), quat_conjugate(q)), 0, 1, 3);
}

PoseTensor compose_refinement(const PoseTensor& delta, const PoseTensor& coarse) {
    require_quaternion(delta.q, "compose_refinement");
    require_quaternion(coarse.q, "compose_refinement");
    for (const Tensor* q : {&delta.q, &coarse.q}) {
        const double n = norm4(*q);
        if (std::abs(n - 1.0) > 1e-3) {
            throw std::invalid_argument("compose_refinement: quaternion norm " + std::to_string(n) +
                                        " is not unit");
        }
    }
    const Tensor dq = delta.q / l2_norm(delta.q);
    const Tensor q = quat_multiply(dq, coarse.q);
    return {q / l2_norm(q), quat_rotate(dq, coarse.t) + delta.t};
}

std::vector<Vec3> warp_tokens(const std::vector<Vec3>& coords, const Pose& pose) {
    std::vector<Vec3> out;
    out.reserve(coords.size());
    for (const Vec3& x : coords) out.push_back(pose.apply(x));
    return out;
}

PoseHead::PoseHead(std::size_t channels, Rng& rng)
    : w1(2 * channels, channels, rng),
      w2(channels, channels, rng),
      fc_rot(channels, 4, rng, 1e-3),
      fc_trans(channels, 3, rng) {
    auto b = fc_rot.bias.mutable_values();
    b[0] = 1.0;
}

Tensor PoseHead::attention_weights(const Tensor& embedding, const Tensor& source_features) const {
    if (embedding.rank() != 2 || source_features.rank() != 2 || embedding.dim(0) != source_features.dim(0)) {
        throw ShapeError("pose weights: embedding " + shape_string(embedding.shape()) + " vs source features " +
                         shape_string(source_features.shape()));
    }
    if (embedding.dim(0) == 0) throw std::invalid_argument("pose weights: no tokens");
    return softmax(w2(relu(w1(concat({embedding, source_features}, 1)))), 0);
}

PoseTensor PoseHead::regress(const Tensor& embedding, const Tensor& weights) const {
    if (embedding.shape() != weights.shape()) {
        throw ShapeError("pose regression: embedding " + shape_string(embedding.shape()) + " vs weights " +
                         shape_string(weights.shape()));
    }
    const Tensor pooled = sum(embedding * weights, 0, true);
    const Tensor raw = reshape(fc_rot(pooled), {4});
    if (norm4(raw) < 1e-12) throw NumericalError("pose regression: degenerate quaternion (norm below 1e-12)");
    return {raw / l2_norm(raw), reshape(fc_trans(pooled), {3})};
}

void PoseHead::collect(const std::string& prefix, NamedParameters& out) const {
    w1.collect(prefix + ".w1", out);
    w2.collect(prefix + ".w2", out);
    fc_rot.collect(prefix + ".fc_rot", out);
    fc_trans.collect(prefix + ".fc_trans", out);
}

}  // namespace regformer
