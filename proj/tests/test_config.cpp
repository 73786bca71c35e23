// SPDX-License-Identifier: Apache-2.0

#include "regformer/config.hpp"

#include <doctest.h>

#include <filesystem>

using namespace regformer;

TEST_CASE("empty config keeps the defaults") {
    const RunConfig cfg = parse_run_config("");
    CHECK(cfg.model.preset == GridPreset::desk16x64);
    CHECK(cfg.model.encoder.channels == 16);
    CHECK(cfg.train.lr == 1e-3);
    CHECK(cfg.train.k_r == -2.5);
    CHECK(cfg.precision == Precision::f64);
    CHECK(cfg.threads == 1);
}

TEST_CASE("values are read from every section") {
    const RunConfig cfg = parse_run_config(R"(
; comment
[grid]
preset = custom
height = 32
width = 128
fov_down_deg = -20
fov_up_deg = 5

[encoder]
channels = 8
use_mask = false

[association]
cross_attention = 0
knn = 4

[training]
steps = 12
alpha = 1,2,3,4
k_t = -1.5

[run]
seed = 99
precision = f32
threads = 2

[paths]
output = results
)");
    CHECK(cfg.model.preset == GridPreset::custom);
    CHECK(cfg.model.grid().height == 32);
    CHECK(cfg.model.grid().width == 128);
    CHECK(cfg.model.encoder.channels == 8);
    CHECK_FALSE(cfg.model.encoder.use_mask);
    CHECK_FALSE(cfg.model.use_cross_attention);
    CHECK(cfg.model.knn == 4);
    CHECK(cfg.train.steps == 12);
    CHECK(cfg.train.alpha == std::array<double, 4>{1, 2, 3, 4});
    CHECK(cfg.train.k_t == -1.5);
    CHECK(cfg.seed == 99);
    CHECK(cfg.train.seed == 99);
    CHECK(cfg.precision == Precision::f32);
    CHECK(cfg.threads == 2);
    CHECK(cfg.output == "results");
}

TEST_CASE("format and parse round trip") {
    RunConfig cfg;
    cfg.model.preset = GridPreset::custom;
    cfg.model.custom_grid = make_grid(64, 256, -24.8, 2.0);
    cfg.model.all_to_all = false;
    cfg.train.decay_steps = 500;
    cfg.train.lr_floor = 3e-6;
    cfg.checkpoint = "out/model.ckpt";
    const auto path = std::filesystem::temp_directory_path() / "regformer_cfg.ini";
    save_run_config(path, cfg);
    const RunConfig back = load_run_config(path);
    CHECK(format_run_config(back) == format_run_config(cfg));
    CHECK(back.model.grid().dphi == doctest::Approx(cfg.model.grid().dphi));
    CHECK(back.model.grid().v_offset == doctest::Approx(cfg.model.grid().v_offset));
    CHECK_FALSE(back.model.all_to_all);
    CHECK(back.train.lr_floor == 3e-6);
    CHECK(back.checkpoint == "out/model.ckpt");
}

TEST_CASE("invalid configs are rejected") {
    CHECK_THROWS_AS(parse_run_config("[nope]\na = 1\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("[encoder]\nchanels = 8\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("[encoder]\nchannels = eight\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("[encoder]\nuse_mask = maybe\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("[training]\nalpha = 1,2,3\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("[training]\nlr = 0\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("[run]\nprecision = f16\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("[run]\nthreads = 0\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("[grid]\npreset = custom\nheight = 0\nwidth = 8\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("[grid\n"), ConfigError);
    CHECK_THROWS_AS(load_run_config("/nonexistent/regformer.ini"), ConfigError);
}
