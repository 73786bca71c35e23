// SPDX-License-Identifier: Apache-2.0

#include "regformer/oracles.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>

namespace regformer::oracle {

Matrix dense_masked_attention(const Matrix& q, const Matrix& k, const Matrix& v, const std::vector<double>& key_mask,
                              const Matrix& bias) {
    if (q.cols != k.cols || k.rows != v.rows || key_mask.size() != k.rows) {
        throw std::invalid_argument("dense_masked_attention: inconsistent shapes");
    }
    const bool has_bias = !bias.data.empty();
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.cols));
    Matrix out(q.rows, v.cols);
    for (std::size_t i = 0; i < q.rows; ++i) {
        std::vector<double> logits(k.rows);
        double top = -INFINITY;
        for (std::size_t j = 0; j < k.rows; ++j) {
            double s = 0.0;
            for (std::size_t c = 0; c < q.cols; ++c) s += q(i, c) * k(j, c);
            logits[j] = s * inv_sqrt_d + key_mask[j] + (has_bias ? bias(i, j) : 0.0);
            if (logits[j] > top) top = logits[j];
        }
        double z = 0.0;
        for (double& l : logits) {
            l = std::exp(l - top);
            z += l;
        }
        for (std::size_t j = 0; j < k.rows; ++j) {
            for (std::size_t c = 0; c < v.cols; ++c) out(i, c) += logits[j] / z * v(j, c);
        }
    }
    return out;
}

namespace {

std::vector<double> row(const Matrix& m, std::size_t r) {
    return {m.data.begin() + static_cast<std::ptrdiff_t>(r * m.cols),
            m.data.begin() + static_cast<std::ptrdiff_t>((r + 1) * m.cols)};
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    const double den = std::sqrt(aa) * std::sqrt(bb);
    return ab / (den > 1e-8 ? den : 1e-8);
}

std::vector<double> mean_of(const Matrix& f, const std::vector<std::size_t>& members) {
    std::vector<double> out(f.cols, 0.0);
    for (std::size_t r : members) {
        for (std::size_t c = 0; c < f.cols; ++c) out[c] += f(r, c) / static_cast<double>(members.size());
    }
    return out;
}

std::vector<double> apply(const DenseLayer& layer, const std::vector<double>& x, bool relu) {
    if (x.size() != layer.weight.rows) throw std::invalid_argument("naive_bat: layer width mismatch");
    std::vector<double> y(layer.weight.cols);
    for (std::size_t o = 0; o < y.size(); ++o) {
        double s = layer.bias[o];
        for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * layer.weight(i, o);
        y[o] = relu && s < 0.0 ? 0.0 : s;
    }
    return y;
}

}  // namespace

Matrix naive_bat(const BatInstance& inst) {
    const std::size_t n = inst.source_features.rows, m = inst.target_features.rows;
    const std::size_t c_out = inst.mlp[2].weight.cols;
    Matrix out(n, c_out);
    for (std::size_t i = 0; i < n; ++i) {
        const auto fi = row(inst.source_features, i);
        const auto pool_i = mean_of(inst.source_features, inst.source_neighbours[i]);
        std::vector<std::vector<double>> scores(m);
        for (std::size_t k = 0; k < m; ++k) {
            const auto ck = row(inst.target_features, k);
            std::vector<double> x = fi;
            x.insert(x.end(), ck.begin(), ck.end());
            const Vec3& a = inst.source_coords[i];
            const Vec3& b = inst.target_coords[k];
            double d2 = 0.0;
            for (int j = 0; j < 3; ++j) x.push_back(a[j]);
            for (int j = 0; j < 3; ++j) x.push_back(b[j]);
            for (int j = 0; j < 3; ++j) {
                x.push_back(a[j] - b[j]);
                d2 += (a[j] - b[j]) * (a[j] - b[j]);
            }
            x.push_back(std::sqrt(d2));
            x.push_back(cosine(fi, ck));
            x.push_back(cosine(pool_i, mean_of(inst.target_features, inst.target_neighbours[k])));
            scores[k] = apply(inst.mlp[2], apply(inst.mlp[1], apply(inst.mlp[0], x, true), true), false);
        }
        for (std::size_t c = 0; c < c_out; ++c) {
            double top = -INFINITY;
            for (std::size_t k = 0; k < m; ++k) top = std::max(top, scores[k][c]);
            double z = 0.0;
            for (std::size_t k = 0; k < m; ++k) z += std::exp(scores[k][c] - top);
            for (std::size_t k = 0; k < m; ++k) out(i, c) += scores[k][c] * std::exp(scores[k][c] - top) / z;
        }
    }
    return out;
}

KabschResult kabsch_align(const std::vector<Vec3>& src, const std::vector<Vec3>& tgt) {
    if (src.size() != tgt.size()) throw std::invalid_argument("kabsch_align: point counts differ");
    if (src.size() < 3) throw std::invalid_argument("kabsch_align: need at least 3 correspondences");
    const double n = static_cast<double>(src.size());
    Eigen::Vector3d cs = Eigen::Vector3d::Zero(), ct = Eigen::Vector3d::Zero();
    for (std::size_t i = 0; i < src.size(); ++i) {
        cs += Eigen::Vector3d(src[i][0], src[i][1], src[i][2]) / n;
        ct += Eigen::Vector3d(tgt[i][0], tgt[i][1], tgt[i][2]) / n;
    }
    Eigen::Matrix3d s = Eigen::Matrix3d::Zero(), cov = Eigen::Matrix3d::Zero();
    for (std::size_t i = 0; i < src.size(); ++i) {
        const Eigen::Vector3d a = Eigen::Vector3d(src[i][0], src[i][1], src[i][2]) - cs;
        const Eigen::Vector3d b = Eigen::Vector3d(tgt[i][0], tgt[i][1], tgt[i][2]) - ct;
        s += a * b.transpose();
        cov += a * a.transpose();
    }
    const Eigen::Vector3d spread = Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d>(cov).eigenvalues();
    if (spread(2) <= 0.0 || spread(1) < 1e-12 * spread(2)) {
        throw std::invalid_argument("kabsch_align: degenerate (collinear or coincident) source points");
    }
    Eigen::Matrix4d nm;
    nm << s(0, 0) + s(1, 1) + s(2, 2), s(1, 2) - s(2, 1), s(2, 0) - s(0, 2), s(0, 1) - s(1, 0),
        s(1, 2) - s(2, 1), s(0, 0) - s(1, 1) - s(2, 2), s(0, 1) + s(1, 0), s(2, 0) + s(0, 2),
        s(2, 0) - s(0, 2), s(0, 1) + s(1, 0), -s(0, 0) + s(1, 1) - s(2, 2), s(1, 2) + s(2, 1),
        s(0, 1) - s(1, 0), s(2, 0) + s(0, 2), s(1, 2) + s(2, 1), -s(0, 0) - s(1, 1) + s(2, 2);
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> eig(nm);
    const Eigen::Vector4d qv = eig.eigenvectors().col(3);
    const Quaternion q{qv(0), qv(1), qv(2), qv(3)};
    const Vec3 c_src{cs(0), cs(1), cs(2)};
    const Vec3 c_tgt{ct(0), ct(1), ct(2)};
    KabschResult out;
    out.pose = Pose(q, c_tgt - rotate(q.normalized(), c_src));
    double sq = 0.0;
    for (std::size_t i = 0; i < src.size(); ++i) {
        const Vec3 r = out.pose.apply(src[i]) - tgt[i];
        sq += dot(r, r);
    }
    out.rms = std::sqrt(sq / n);
    return out;
}

double recount_recall(const std::vector<EvalRecord>& records, double rre_thresh_deg, double rte_thresh_m) {
    if (records.empty()) throw std::invalid_argument("recount_recall: no records");
    std::size_t hits = 0;
    for (const auto& r : records) hits += (r.rre_deg < rre_thresh_deg) && (r.rte_m < rte_thresh_m);
    return static_cast<double>(hits) / static_cast<double>(records.size());
}

}  // namespace regformer::oracle
