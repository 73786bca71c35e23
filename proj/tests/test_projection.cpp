// SPDX-License-Identifier: Apache-2.0

#include "regformer/projection.hpp"
#include "regformer/tensor.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

using namespace regformer;

namespace {

ProjectionGrid centred_grid(std::size_t h, std::size_t w) {
    ProjectionGrid g;
    g.height = h;
    g.width = w;
    g.dtheta = 2.0 * std::numbers::pi / static_cast<double>(w);
    g.dphi = 2.0 * std::numbers::pi / 180.0;
    g.v_offset = static_cast<double>(h) / 2.0;
    return g;
}

PointCloud cloud(std::vector<Vec3> pts) {
    PointCloud pc;
    pc.points = std::move(pts);
    return pc;
}

ProjectionMask mask_from(std::size_t rows, std::size_t cols, const std::vector<int>& valid) {
    ProjectionMask m;
    m.rows = rows;
    m.cols = cols;
    for (int v : valid) m.values.push_back(v ? 0.0 : kMaskValue);
    return m;
}

}  // namespace

TEST_CASE("axis-aligned points land on the analytic pixels") {
    const ProjectionGrid g = centred_grid(16, 64);
    const Projection p = project_cylindrical(cloud({{10, 0, 0}, {0, 10, 0.5}}), g);
    CHECK(p.pixel_index[0] == 8 * 64 + 32);
    CHECK(p.pixel_index[1] % 64 == 48);
}

TEST_CASE("collisions keep the nearest point") {
    const ProjectionGrid g = centred_grid(16, 64);
    const Projection p = project_cylindrical(cloud({{9, 0, 0}, {5, 0, 0}}), g);
    CHECK(p.pixel_index[0] == p.pixel_index[1]);
    CHECK(p.image.at(8, 32) == Vec3{5, 0, 0});
    CHECK(p.stats.occluded == 1);
    CHECK(p.mask.valid_count() == 1);
}

TEST_CASE("zero-range and out-of-view points are dropped") {
    const ProjectionGrid g = build_default_grid(GridPreset::desk16x64);
    const Projection p = project_cylindrical(cloud({{0, 0, 0}, {0, 0, 10}, {10, 0, 0}}), g);
    CHECK(p.stats.dropped_zero_range == 1);
    CHECK(p.stats.dropped_out_of_fov == 1);
    CHECK(p.stats.landed == 1);
    CHECK(p.pixel_index[0] == -1);
}

TEST_CASE("grid presets") {
    const ProjectionGrid k = build_default_grid(GridPreset::kitti64x1792);
    CHECK(k.width == 1792);
    CHECK(k.height == 64);
    CHECK(k.dtheta == doctest::Approx(2.0 * std::numbers::pi / 1792));
    const ProjectionGrid d = build_default_grid(GridPreset::desk16x64);
    CHECK(d.dtheta == 2.0 * std::numbers::pi / 64);
    ProjectionGrid bad = d;
    bad.height = 0;
    CHECK_THROWS(build_default_grid(GridPreset::custom, bad));
    CHECK_THROWS(make_grid(0, 64, -10, 10));
    CHECK(parse_grid_preset("desk16x64") == GridPreset::desk16x64);
    CHECK_THROWS(parse_grid_preset("nope"));

    // The lowest and highest elevations land on the first and last rows.
    PixelCoord px;
    const double down = -24.8 * std::numbers::pi / 180.0, up = 2.0 * std::numbers::pi / 180.0;
    REQUIRE(pixel_of(k, {std::cos(down), 0, std::sin(down)}, px));
    CHECK(px.row == 0);
    REQUIRE(pixel_of(k, {std::cos(up), 0, std::sin(up)}, px));
    CHECK(px.row == 63);
}

TEST_CASE("mask downsampling uses the any-valid rule") {
    std::vector<int> none(32, 0);
    CHECK_FALSE(downsample_mask(mask_from(4, 8, none), 4, 8).valid(0));
    std::vector<int> one(32, 0);
    one[13] = 1;
    CHECK(downsample_mask(mask_from(4, 8, one), 4, 8).valid(0));
    std::vector<int> checker;
    for (int r = 0; r < 4; ++r) {
        for (int c = 0; c < 8; ++c) checker.push_back((r + c) % 2);
    }
    const ProjectionMask d = downsample_mask(mask_from(4, 8, checker), 2, 2);
    CHECK(d.valid_count() == 8);
    CHECK(d.stage == 1);
    CHECK_THROWS(downsample_mask(mask_from(4, 8, checker), 3, 2));
}

TEST_CASE("staged downsampling composes") {
    const PointCloud pc = synth_scene(4, 3000);
    const Projection p = project_cylindrical(pc, build_default_grid(GridPreset::desk16x64));
    const ProjectionMask once = downsample_mask(p.mask, 4, 8);
    const ProjectionMask staged = downsample_mask(downsample_mask(downsample_mask(p.mask, 2, 4), 2, 1), 1, 2);
    CHECK(once.values == staged.values);
}

TEST_CASE("token centroids") {
    ProjectionGrid g = centred_grid(2, 2);
    PseudoImage img{g, std::vector<double>(12, 0.0)};
    img.xyz[0] = 0, img.xyz[1] = 0, img.xyz[2] = 1;   // (0,0)
    img.xyz[9] = 0, img.xyz[10] = 0, img.xyz[11] = 3; // (1,1)
    const ProjectionMask m = mask_from(2, 2, {1, 0, 0, 1});
    const TokenCentroids c = token_centroids(img, m, 2, 2);
    CHECK(c.xyz[0] == Vec3{0, 0, 2});
    CHECK(c.pixel_counts[0] == 2);
    const TokenCentroids single = token_centroids(img, mask_from(2, 2, {0, 0, 0, 1}), 1, 1);
    CHECK(single.xyz[3] == Vec3{0, 0, 3});
    CHECK_FALSE(single.valid(1));
    CHECK(single.xyz[1] == Vec3{0, 0, 0});
}

TEST_CASE("round trip, mask agreement and order independence on synthetic scenes") {
    const ProjectionGrid g = build_default_grid(GridPreset::desk16x64);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        PointCloud pc = synth_scene(seed, 2000);
        const Projection p = project_cylindrical(pc, g);
        const RoundTripStats rt = check_round_trip(p.image, p.mask);
        CHECK(rt.valid_pixels > 0);
        CHECK(rt.reprojected_ok == rt.valid_pixels);
        CHECK(rt.mask_mismatches == 0);
        std::mt19937_64 rng(seed);
        std::shuffle(pc.points.begin(), pc.points.end(), rng);
        const Projection q = project_cylindrical(pc, g);
        CHECK(q.image.xyz == p.image.xyz);
        CHECK(q.mask.values == p.mask.values);
    }
}
