// SPDX-License-Identifier: Apache-2.0

#include "association_util.hpp"
#include "test_util.hpp"
#include "window_oracle.hpp"

#include "regformer/association.hpp"
#include "regformer/oracles.hpp"

#include <doctest.h>

#include <numeric>

using namespace regformer;
using namespace regformer::testing;

namespace {

TokenGrid random_grid(std::size_t rows, std::size_t cols, std::size_t channels, double invalid_rate,
                      std::mt19937_64& rng) {
    TokenGrid g;
    g.rows = rows;
    g.cols = cols;
    g.features = random_tensor({rows * cols, channels}, rng);
    g.mask = random_mask(rows, cols, invalid_rate, rng);
    g.centroids.rows = rows;
    g.centroids.cols = cols;
    std::uniform_real_distribution<double> u(-5.0, 5.0);
    for (std::size_t i = 0; i < rows * cols; ++i) {
        const bool ok = g.mask.valid(i);
        g.centroids.xyz.push_back(ok ? Vec3{u(rng), u(rng), u(rng)} : Vec3{0, 0, 0});
        g.centroids.pixel_counts.push_back(ok ? 1 : 0);
    }
    return g;
}

ConditionedFeatures random_pair(std::uint64_t seed, std::size_t c, double invalid_rate = 0.3) {
    std::mt19937_64 rng(seed);
    return {gather_valid_tokens(random_grid(3, 6, c, invalid_rate, rng)),
            gather_valid_tokens(random_grid(4, 5, c, invalid_rate, rng))};
}

}  // namespace

TEST_CASE("relative space information") {
    const auto r = relative_space_info({1, 2, 3}, {1, 0, 3});
    CHECK(r[3] == 1.0);
    CHECK(r[6] == 0.0);
    CHECK(r[7] == 2.0);
    CHECK(r[9] == 2.0);
    // The difference and distance channels do not move with a common translation.
    const Vec3 shift{10, -4, 7};
    const auto moved = relative_space_info(Vec3{1, 2, 3} + shift, Vec3{1, 0, 3} + shift);
    for (int i = 6; i < 10; ++i) CHECK(moved[i] == doctest::Approx(r[i]).epsilon(1e-12));
}

TEST_CASE("cosine similarity floors its denominator") {
    const std::vector<double> zero{0, 0, 0}, a{1, 2, 3}, b{2, 4, 6}, c{-1, -2, -3};
    CHECK(cosine_similarity(zero, a) == 0.0);
    CHECK(cosine_similarity(a, b) == doctest::Approx(1.0));
    CHECK(cosine_similarity(a, c) == doctest::Approx(-1.0));
}

TEST_CASE("valid token gathering and neighbourhoods") {
    // 2 x 4 grid, only (0,0), (0,3) and (1,1) valid.
    TokenGrid g;
    g.rows = 2;
    g.cols = 4;
    g.features = Tensor({8, 1}, {0, 1, 2, 3, 4, 5, 6, 7});
    g.mask.rows = 2;
    g.mask.cols = 4;
    g.mask.values.assign(8, kMaskValue);
    for (std::size_t i : {0, 3, 5}) g.mask.values[i] = 0.0;
    g.centroids.rows = 2;
    g.centroids.cols = 4;
    g.centroids.xyz.assign(8, Vec3{0, 0, 0});
    g.centroids.pixel_counts.assign(8, 1);
    const FrameTokens t = gather_valid_tokens(g);
    REQUIRE(t.size() == 3);
    CHECK(t.grid_index == std::vector<std::size_t>{0, 3, 5});
    CHECK(t.features.values()[1] == 3.0);
    const auto lists = neighbour_lists(t);
    // (0,0) sees (0,3) through the column wrap and (1,1) diagonally.
    CHECK(lists[0].size() == 3);
    CHECK(lists[1].size() == 2);  // (0,3) wraps to (0,0); (1,1) is two columns away
    CHECK(t.pool_weight[0] == doctest::Approx(1.0 / 3.0));
    const Tensor pooled = neighborhood_pool(t);
    CHECK(pooled[0] == doctest::Approx((0.0 + 3.0 + 5.0) / 3.0));
    CHECK(pooled[1] == doctest::Approx(1.5));
    CHECK_THROWS_AS(with_features(t, Tensor::zeros({2, 1})), ShapeError);
}

TEST_CASE("rows do not wrap in neighbourhoods") {
    std::mt19937_64 rng(1);
    TokenGrid g = random_grid(3, 4, 2, 0.0, rng);
    const FrameTokens t = gather_valid_tokens(g);
    CHECK(neighbour_lists(t)[0].size() == 6);   // top row corner: 2 rows x 3 columns
    CHECK(neighbour_lists(t)[5].size() == 9);   // interior token
}

TEST_CASE("candidate selection") {
    const Candidates all = all_candidates(2, 3);
    CHECK(all.index == std::vector<std::size_t>{0, 1, 2, 0, 1, 2});
    const std::vector<Vec3> tgt{{0, 0, 0}, {2, 0, 0}, {-2, 0, 0}, {5, 0, 0}};
    const Candidates near = knn_candidates({{1, 0, 0}}, tgt, 2);
    CHECK(near.index == std::vector<std::size_t>{0, 1});  // equidistant tie keeps the lower index
    CHECK_FALSE(near.clamped);
    const Candidates big = knn_candidates({{1, 0, 0}}, tgt, 9);
    CHECK(big.clamped);
    CHECK(big.per_source == 4);
    CHECK_THROWS(knn_candidates({{1, 0, 0}}, {}, 1));
}

TEST_CASE("gathering equals the literal-loop oracle") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const std::size_t c = 6;
        const ConditionedFeatures cond = random_pair(seed, c);
        REQUIRE(cond.source.size() > 0);
        REQUIRE(cond.target.size() > 0);
        Rng init(seed);
        MotionEmbedder mlp(c, init);
        std::mt19937_64 rng(seed + 50);
        for (const Linear* l : {&mlp.l1, &mlp.l2, &mlp.l3}) {
            randomize(l->weight, rng, 0.5);
            randomize(l->bias, rng, 0.2);
        }
        const Tensor fast = all_to_all_embedding(mlp, cond);
        const oracle::Matrix slow = oracle::naive_bat(make_instance(cond.source, cond.target, mlp));
        CHECK(max_abs_diff(fast.values(), slow.data) < 1e-9);
    }
}

TEST_CASE("embedding invariances and pooling weights") {
    const std::size_t c = 8;
    const ConditionedFeatures cond = random_pair(3, c);
    Rng init(3);
    MotionEmbedder mlp(c, init);
    std::mt19937_64 rng(4);
    randomize(mlp.l3.weight, rng, 0.5);
    EmbeddingTrace trace;
    const Tensor base = all_to_all_embedding(mlp, cond, &trace);

    SUBCASE("softmax weights sum to one over candidates") {
        const std::size_t n = trace.weights.dim(0), k = trace.weights.dim(1);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t ch = 0; ch < c; ++ch) {
                double s = 0.0;
                for (std::size_t j = 0; j < k; ++j) s += trace.weights[(i * k + j) * c + ch];
                CHECK(std::abs(s - 1.0) < 1e-12);
            }
        }
    }
    SUBCASE("target token order does not matter") {
        std::vector<std::size_t> order(cond.target.size());
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        const ConditionedFeatures shuffled{cond.source, permute_tokens(cond.target, order)};
        CHECK(max_abs_diff(all_to_all_embedding(mlp, shuffled).values(), base.values()) < 1e-12);
    }
    SUBCASE("source token order permutes the rows") {
        std::vector<std::size_t> order(cond.source.size());
        std::iota(order.begin(), order.end(), 0);
        std::reverse(order.begin(), order.end());
        const ConditionedFeatures flipped{permute_tokens(cond.source, order), cond.target};
        const Tensor out = all_to_all_embedding(mlp, flipped);
        CHECK(max_abs_diff(out.values(), index_select(base, 0, order).values()) < 1e-12);
    }
    SUBCASE("knn with k = m matches all-to-all") {
        const Tensor knn = knn_embedding(mlp, cond.source, cond.source.coords, cond.target, cond.target.size());
        CHECK(max_abs_diff(knn.values(), base.values()) < 1e-12);
    }
    SUBCASE("knn with k > m is clamped") {
        const Tensor knn = knn_embedding(mlp, cond.source, cond.source.coords, cond.target, 1000);
        CHECK(max_abs_diff(knn.values(), base.values()) < 1e-12);
    }
}

TEST_CASE("motion embedding gradients") {
    const std::size_t c = 4;
    const ConditionedFeatures cond = random_pair(9, c, 0.4);
    Rng init(9);
    MotionEmbedder mlp(c, init);
    std::mt19937_64 rng(10);
    for (const Linear* l : {&mlp.l1, &mlp.l2, &mlp.l3}) randomize(l->weight, rng, 0.5);
    NamedParameters params;
    mlp.collect("bat", params);
    for (auto& [name, p] : params) {
        CAPTURE(name);
        CHECK(fd_check_parameter(p, [&] { return probe(all_to_all_embedding(mlp, cond)); }, 32) < 1e-5);
    }
    CHECK(finite_difference_check(
              [&](const Tensor& f) {
                  const ConditionedFeatures cc{with_features(cond.source, f), cond.target};
                  return probe(all_to_all_embedding(mlp, cc));
              },
              cond.source.features) < 1e-5);
}

TEST_CASE("cross-attention") {
    const std::size_t c = 8, heads = 2, d = 4;
    Rng init(2);
    CrossAttention ca(c, heads, init);
    std::mt19937_64 rng(2);
    for (const Linear* l : {&ca.wq, &ca.wk, &ca.wv, &ca.wo}) randomize(l->weight, rng, 0.5);
    const Tensor src = random_tensor({5, c}, rng);
    const Tensor tgt = random_tensor({7, c}, rng);

    CrossAttentionTrace trace;
    const Tensor out = ca.attend(src, tgt, &trace);
    CHECK(out.shape() == Shape{5, c});
    CHECK(trace.probs.shape() == Shape{heads, 5, 7});
    for (std::size_t r = 0; r < heads * 5; ++r) {
        double s = 0.0;
        for (std::size_t j = 0; j < 7; ++j) s += trace.probs[r * 7 + j];
        CHECK(std::abs(s - 1.0) < 1e-12);
    }

    // Readout against the dense oracle, head by head.
    const Tensor q = ca.wq(src), k = ca.wk(tgt), v = ca.wv(tgt);
    for (std::size_t h = 0; h < heads; ++h) {
        oracle::Matrix qm(5, d), km(7, d), vm(7, d);
        for (std::size_t e = 0; e < d; ++e) {
            for (std::size_t i = 0; i < 5; ++i) qm(i, e) = q[i * c + h * d + e];
            for (std::size_t j = 0; j < 7; ++j) {
                km(j, e) = k[j * c + h * d + e];
                vm(j, e) = v[j * c + h * d + e];
            }
        }
        const oracle::Matrix ref = oracle::dense_masked_attention(qm, km, vm, std::vector<double>(7, 0.0), {});
        for (std::size_t i = 0; i < 5; ++i) {
            for (std::size_t e = 0; e < d; ++e) CHECK(std::abs(trace.readout[i * c + h * d + e] - ref(i, e)) < 1e-12);
        }
    }

    // Shared weights in both directions.
    const auto [s2, t2] = ca.forward(src, tgt);
    CHECK(max_abs_diff(s2.values(), out.values()) == 0.0);
    CHECK(max_abs_diff(t2.values(), ca.attend(tgt, src).values()) == 0.0);

    NamedParameters params;
    ca.collect("cross", params);
    for (auto& [name, p] : params) {
        CAPTURE(name);
        CHECK(fd_check_parameter(p, [&] { return probe(ca.attend(src, tgt)); }, 32) < 1e-5);
    }
    CHECK(finite_difference_check([&](const Tensor& x) { return probe(ca.attend(src, x)); }, tgt) < 1e-5);

    // Zero output projection leaves LN(query).
    NamedParameters wo;
    ca.wo.collect("wo", wo);
    zero_parameters(wo);
    CHECK(max_abs_diff(ca.attend(src, tgt).values(), ca.norm(src).values()) < 1e-12);

    CHECK_THROWS_AS(ca.attend(Tensor::zeros({0, c}), tgt), std::invalid_argument);
    CHECK_THROWS_AS(ca.attend(src, Tensor::zeros({3, 4})), ShapeError);
    Rng init2(1);
    CHECK_THROWS(CrossAttention(6, 4, init2));
}
