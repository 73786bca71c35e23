// SPDX-License-Identifier: Apache-2.0
//
// Slow, literal reference implementations used to validate the production
// paths. Everything here works on plain doubles with explicit loops.

#pragma once

#include "regformer/metrics.hpp"
#include "regformer/pointcloud.hpp"

#include <array>
#include <vector>

namespace regformer::oracle {

/// Row-major matrix of plain doubles.
struct Matrix {
    std::size_t rows = 0, cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

/// Single-head softmax(Q K^T / sqrt(d) + mask[k] + bias[q][k]) V with one
/// additive key mask entry per key. Bias may be empty.
Matrix dense_masked_attention(const Matrix& q, const Matrix& k, const Matrix& v, const std::vector<double>& key_mask,
                              const Matrix& bias);

/// Plain weights of one linear layer, weight stored [in][out].
struct DenseLayer {
    Matrix weight;
    std::vector<double> bias;
};

struct BatInstance {
    Matrix source_features;  // n x C
    Matrix target_features;  // m x C
    std::vector<Vec3> source_coords;
    std::vector<Vec3> target_coords;
    // Neighbourhood membership in row indices (including self), per token.
    std::vector<std::vector<std::size_t>> source_neighbours;
    std::vector<std::vector<std::size_t>> target_neighbours;
    std::array<DenseLayer, 3> mlp;
};

/// Per-(i, k) loops over the gathering equations; returns n x C embeddings.
Matrix naive_bat(const BatInstance& inst);

struct KabschResult {
    Pose pose;
    double rms = 0.0;
};

/// Least-squares rigid fit mapping src onto tgt via the 4x4 quaternion eigenproblem.
/// Throws std::invalid_argument for fewer than 3 points or a (near) collinear source set.
KabschResult kabsch_align(const std::vector<Vec3>& src, const std::vector<Vec3>& tgt);

/// Fraction of records with rre < rre_thresh and rte < rte_thresh.
double recount_recall(const std::vector<EvalRecord>& records, double rre_thresh_deg, double rte_thresh_m);

}  // namespace regformer::oracle
