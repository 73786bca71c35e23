// SPDX-License-Identifier: Apache-2.0

#include "regformer/association.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <stdexcept>

namespace regformer {

namespace {

constexpr double kCosineEps = 1e-8;

}  // namespace

FrameTokens gather_valid_tokens(const TokenGrid& grid) {
    FrameTokens out;
    std::vector<std::size_t> row_of(grid.size(), 0);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        if (!grid.mask.valid(i)) continue;
        row_of[i] = out.grid_index.size();
        out.grid_index.push_back(i);
        out.coords.push_back(grid.centroids.xyz[i]);
    }
    const std::size_t n = out.grid_index.size();
    out.features = index_select(grid.features, 0, out.grid_index);

    out.pool_index.assign(n * FrameTokens::kPoolSlots, 0);
    out.pool_weight.assign(n * FrameTokens::kPoolSlots, 0.0);
    const auto rows = static_cast<std::ptrdiff_t>(grid.rows);
    const auto cols = static_cast<std::ptrdiff_t>(grid.cols);
    for (std::size_t k = 0; k < n; ++k) {
        const auto r = static_cast<std::ptrdiff_t>(out.grid_index[k] / grid.cols);
        const auto c = static_cast<std::ptrdiff_t>(out.grid_index[k] % grid.cols);
        std::vector<std::size_t> members;
        for (std::ptrdiff_t dr = -1; dr <= 1; ++dr) {
            const std::ptrdiff_t rr = r + dr;
            if (rr < 0 || rr >= rows) continue;
            for (std::ptrdiff_t dc = -1; dc <= 1; ++dc) {
                const std::ptrdiff_t cc = ((c + dc) % cols + cols) % cols;
                const auto idx = static_cast<std::size_t>(rr * cols + cc);
                if (!grid.mask.valid(idx)) continue;
                if (std::find(members.begin(), members.end(), row_of[idx]) == members.end()) {
                    members.push_back(row_of[idx]);
                }
            }
        }
        for (std::size_t s = 0; s < FrameTokens::kPoolSlots; ++s) {
            const std::size_t slot = k * FrameTokens::kPoolSlots + s;
            if (s < members.size()) {
                out.pool_index[slot] = members[s];
                out.pool_weight[slot] = 1.0 / static_cast<double>(members.size());
            } else {
                out.pool_index[slot] = k;
            }
        }
    }
    return out;
}

FrameTokens with_features(const FrameTokens& tokens, Tensor features) {
    if (features.rank() != 2 || features.dim(0) != tokens.size()) {
        throw ShapeError("features " + shape_string(features.shape()) + " do not match " +
                         std::to_string(tokens.size()) + " tokens");
    }
    FrameTokens out = tokens;
    out.features = std::move(features);
    return out;
}

Tensor neighborhood_pool(const FrameTokens& tokens) {
    const std::size_t n = tokens.size(), c = tokens.features.dim(1), slots = FrameTokens::kPoolSlots;
    Tensor gathered = reshape(index_select(tokens.features, 0, tokens.pool_index), {n, slots, c});
    return sum(gathered * Tensor({n, slots, 1}, tokens.pool_weight), 1);
}

// ---------------------------------------------------------------- cross attention

CrossAttention::CrossAttention(std::size_t channels, std::size_t heads, Rng& rng)
    : wq(channels, channels, rng),
      wk(channels, channels, rng),
      wv(channels, channels, rng),
      wo(channels, channels, rng),
      norm(channels),
      heads_(heads) {
    if (heads == 0 || channels % heads != 0) {
        throw std::invalid_argument("channels " + std::to_string(channels) + " not divisible by " +
                                    std::to_string(heads) + " heads");
    }
}

Tensor CrossAttention::attend(const Tensor& query, const Tensor& context, CrossAttentionTrace* trace) const {
    if (query.rank() != 2 || context.rank() != 2 || query.dim(0) == 0 || context.dim(0) == 0) {
        throw std::invalid_argument("cross-attention needs non-empty frames, got " + shape_string(query.shape()) +
                                    " and " + shape_string(context.shape()));
    }
    if (query.dim(1) != context.dim(1)) throw ShapeError("cross-attention widths differ: " +
                                                         shape_string(query.shape()) + " vs " +
                                                         shape_string(context.shape()));
    const std::size_t n = query.dim(0), m = context.dim(0), c = query.dim(1), h = heads_, d = c / h;
    Tensor q = permute(reshape(wq(query), {n, h, d}), {1, 0, 2});
    Tensor k = permute(reshape(wk(context), {m, h, d}), {1, 2, 0});
    Tensor v = permute(reshape(wv(context), {m, h, d}), {1, 0, 2});
    Tensor probs = softmax(scale(matmul(q, k), 1.0 / std::sqrt(static_cast<double>(d))), 2);  // [h, n, m]
    Tensor readout = reshape(permute(matmul(probs, v), {1, 0, 2}), {n, c});
    if (trace) {
        trace->probs = probs;
        trace->readout = readout;
    }
    return norm(query + wo(readout));
}

std::pair<Tensor, Tensor> CrossAttention::forward(const Tensor& source, const Tensor& target) const {
    return {attend(source, target), attend(target, source)};
}

void CrossAttention::collect(const std::string& prefix, NamedParameters& out) const {
    wq.collect(prefix + ".wq", out);
    wk.collect(prefix + ".wk", out);
    wv.collect(prefix + ".wv", out);
    wo.collect(prefix + ".wo", out);
    norm.collect(prefix + ".norm", out);
}

// ---------------------------------------------------------------- gathering

std::array<double, 10> relative_space_info(const Vec3& x, const Vec3& y) {
    const Vec3 d = x - y;
    return {x[0], x[1], x[2], y[0], y[1], y[2], d[0], d[1], d[2], norm(d)};
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    return ab / std::max(std::sqrt(aa) * std::sqrt(bb), kCosineEps);
}

Candidates all_candidates(std::size_t n, std::size_t m) {
    Candidates c;
    c.per_source = m;
    c.index.resize(n * m);
    for (std::size_t i = 0; i < n; ++i) std::iota(c.index.begin() + static_cast<std::ptrdiff_t>(i * m),
                                                  c.index.begin() + static_cast<std::ptrdiff_t>((i + 1) * m), 0);
    return c;
}

Candidates knn_candidates(const std::vector<Vec3>& source, const std::vector<Vec3>& target, std::size_t k) {
    const std::size_t m = target.size();
    if (m == 0) throw std::invalid_argument("knn: empty target set");
    Candidates c;
    c.clamped = k > m;
    c.per_source = std::min(k, m);
    c.index.reserve(source.size() * c.per_source);
    std::vector<std::pair<double, std::size_t>> dist(m);
    for (const Vec3& x : source) {
        for (std::size_t j = 0; j < m; ++j) {
            const Vec3 d = x - target[j];
            dist[j] = {dot(d, d), j};
        }
        std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(c.per_source), dist.end());
        for (std::size_t j = 0; j < c.per_source; ++j) c.index.push_back(dist[j].second);
    }
    return c;
}

MotionEmbedder::MotionEmbedder(std::size_t channels, Rng& rng)
    : l1(2 * channels + 12, channels, rng), l2(channels, channels, rng), l3(channels, channels, rng) {}

Tensor MotionEmbedder::embed(const FrameTokens& source, const std::vector<Vec3>& source_coords,
                             const FrameTokens& target, const Candidates& candidates, EmbeddingTrace* trace) const {
    const std::size_t n = source.size(), m = target.size(), k = candidates.per_source;
    if (n == 0 || m == 0 || k == 0) throw std::invalid_argument("motion embedding needs non-empty frames");
    if (source_coords.size() != n || candidates.index.size() != n * k) {
        throw ShapeError("motion embedding: coordinates or candidates do not match " + std::to_string(n) +
                         " source tokens");
    }
    const std::size_t c = source.features.dim(1);
    if (target.features.dim(1) != c || l1.in_features() != 2 * c + 12) {
        throw ShapeError("motion embedding widths: source " + shape_string(source.features.shape()) + ", target " +
                         shape_string(target.features.shape()));
    }

    std::vector<std::size_t> src_rows(n * k);
    std::vector<double> geometry(n * k * 10);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
            const std::size_t slot = i * k + j;
            src_rows[slot] = i;
            const auto r = relative_space_info(source_coords[i], target.coords[candidates.index[slot]]);
            std::copy(r.begin(), r.end(), geometry.begin() + static_cast<std::ptrdiff_t>(slot * 10));
        }
    }

    auto cosine = [&](const Tensor& a, const Tensor& b) {
        Tensor na = index_select(reshape(l2_norm(a), {n, 1}), 0, src_rows);
        Tensor nb = index_select(reshape(l2_norm(b), {m, 1}), 0, candidates.index);
        Tensor ga = index_select(a, 0, src_rows);
        Tensor gb = index_select(b, 0, candidates.index);
        return sum(ga * gb, 1, true) / clamp_min(na * nb, kCosineEps);
    };

    Tensor f_i = index_select(source.features, 0, src_rows);
    Tensor cf_k = index_select(target.features, 0, candidates.index);
    Tensor s_feat = cosine(source.features, target.features);
    Tensor s_neigh = cosine(neighborhood_pool(source), neighborhood_pool(target));
    Tensor x = concat({f_i, cf_k, Tensor({n * k, 10}, std::move(geometry)), s_feat, s_neigh}, 1);
    Tensor scores = reshape(l3(relu(l2(relu(l1(x))))), {n, k, c});
    Tensor weights = softmax(scores, 1);
    if (trace) {
        trace->scores = scores;
        trace->weights = weights;
    }
    return sum(scores * weights, 1);
}

void MotionEmbedder::collect(const std::string& prefix, NamedParameters& out) const {
    l1.collect(prefix + ".l1", out);
    l2.collect(prefix + ".l2", out);
    l3.collect(prefix + ".l3", out);
}

Tensor all_to_all_embedding(const MotionEmbedder& mlp, const ConditionedFeatures& cond, EmbeddingTrace* trace) {
    return mlp.embed(cond.source, cond.source.coords, cond.target,
                     all_candidates(cond.source.size(), cond.target.size()), trace);
}

Tensor knn_embedding(const MotionEmbedder& mlp, const FrameTokens& source, const std::vector<Vec3>& warped_coords,
                     const FrameTokens& target, std::size_t k, EmbeddingTrace* trace) {
    Candidates cand = knn_candidates(warped_coords, target.coords, k);
    if (cand.clamped) {
        std::cerr << "warning: knn k=" << k << " exceeds " << target.size() << " target tokens; clamped\n";
    }
    return mlp.embed(source, warped_coords, target, cand, trace);
}

}  // namespace regformer
