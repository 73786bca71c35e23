// SPDX-License-Identifier: Apache-2.0

#include "regformer/oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace regformer;
using namespace regformer::oracle;

TEST_CASE("dense masked attention examples") {
    Matrix q(1, 2), k(3, 2), v(3, 1);
    v(0, 0) = 1, v(1, 0) = 2, v(2, 0) = 6;
    // Zero queries attend uniformly.
    CHECK(dense_masked_attention(q, k, v, {0, 0, 0}, {})(0, 0) == doctest::Approx(3.0));
    // Masked keys drop out.
    CHECK(dense_masked_attention(q, k, v, {0, 0, -1e9}, {})(0, 0) == doctest::Approx(1.5));
    // Bias favours one key.
    Matrix bias(1, 3);
    bias(0, 2) = 50;
    CHECK(dense_masked_attention(q, k, v, {0, 0, 0}, bias)(0, 0) == doctest::Approx(6.0));
    // Scaled dot product.
    q(0, 0) = 1;
    k(0, 0) = std::sqrt(2.0) * std::log(3.0);
    const double w0 = 3.0 / 5.0, w = 1.0 / 5.0;
    CHECK(dense_masked_attention(q, k, v, {0, 0, 0}, {})(0, 0) == doctest::Approx(w0 * 1 + w * 2 + w * 6));
}

TEST_CASE("literal gathering on a single candidate") {
    // With one target token the attentive pooling returns the MLP scores unchanged.
    BatInstance inst;
    inst.source_features = Matrix(1, 1);
    inst.target_features = Matrix(1, 1);
    inst.source_features(0, 0) = 2;
    inst.target_features(0, 0) = -3;
    inst.source_coords = {{1, 0, 0}};
    inst.target_coords = {{0, 0, 0}};
    inst.source_neighbours = {{0}};
    inst.target_neighbours = {{0}};
    for (auto& l : inst.mlp) {
        l.weight = Matrix(l.weight.rows, 1);
        l.bias = {0.0};
    }
    inst.mlp[0].weight = Matrix(14, 1);
    inst.mlp[0].weight(0, 0) = 1;    // f_i
    inst.mlp[0].weight(11, 0) = 10;  // distance
    inst.mlp[0].weight(12, 0) = 100; // cosine of features
    inst.mlp[1].weight = Matrix(1, 1);
    inst.mlp[1].weight(0, 0) = 1;
    inst.mlp[2].weight = Matrix(1, 1);
    inst.mlp[2].weight(0, 0) = 1;
    // relu(2 + 10 - 100) = 0
    CHECK(naive_bat(inst)(0, 0) == 0.0);
    inst.mlp[0].weight(12, 0) = -100;
    CHECK(naive_bat(inst)(0, 0) == doctest::Approx(112.0));
}

TEST_CASE("kabsch recovers exact motions") {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-10, 10);
    for (std::uint64_t s = 0; s < 30; ++s) {
        const Pose gt = random_pose_sample(s, 180, 20);
        std::vector<Vec3> src, tgt;
        for (int i = 0; i < 50; ++i) {
            src.push_back({u(rng), u(rng), u(rng)});
            tgt.push_back(gt.apply(src.back()));
        }
        const KabschResult r = kabsch_align(src, tgt);
        CHECK(rre(r.pose, gt) < 1e-5);
        CHECK(rte(r.pose, gt) < 1e-9);
        CHECK(r.rms < 1e-9);
    }
}

TEST_CASE("kabsch under noise and degenerate input") {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(-10, 10);
    std::normal_distribution<double> noise(0, 0.01);
    const Pose gt = random_pose_sample(7, 45, 3);
    std::vector<Vec3> src, tgt;
    for (int i = 0; i < 500; ++i) {
        src.push_back({u(rng), u(rng), u(rng)});
        tgt.push_back(gt.apply(src.back()) + Vec3{noise(rng), noise(rng), noise(rng)});
    }
    const KabschResult r = kabsch_align(src, tgt);
    CHECK(rre(r.pose, gt) < 0.05);
    CHECK(rte(r.pose, gt) < 0.01);
    CHECK(r.rms == doctest::Approx(0.01 * std::sqrt(3.0)).epsilon(0.1));

    CHECK_THROWS(kabsch_align({{0, 0, 0}, {1, 0, 0}}, {{0, 0, 0}, {1, 0, 0}}));
    CHECK_THROWS(kabsch_align({{0, 0, 0}, {1, 0, 0}, {2, 0, 0}}, {{0, 0, 0}, {1, 0, 0}, {2, 0, 0}}));
    CHECK_THROWS(kabsch_align({{0, 0, 0}, {1, 0, 0}, {0, 1, 0}}, {{0, 0, 0}, {1, 0, 0}}));
    // Three non-collinear points are enough.
    const std::vector<Vec3> tri{{0, 0, 0}, {1, 0, 0}, {0, 1, 0}};
    const KabschResult t = kabsch_align(tri, {gt.apply(tri[0]), gt.apply(tri[1]), gt.apply(tri[2])});
    CHECK(rre(t.pose, gt) < 1e-5);
}
