// SPDX-License-Identifier: Apache-2.0

#include "regformer/metrics.hpp"
#include "regformer/oracles.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

using namespace regformer;

namespace {

EvalRecord rec(const std::string& id, double r, double t, double ms = 10.0, std::size_t n = 1000) {
    return {id, r, t, ms, n};
}

}  // namespace

TEST_CASE("rotation and translation errors") {
    const Pose id = Pose::identity();
    CHECK(rre(id, id) == 0.0);
    CHECK(rte(id, id) == 0.0);
    const Pose r10(Quaternion::from_axis_angle({1, 0, 0}, 10.0 * std::numbers::pi / 180.0), {3, 4, 0});
    CHECK(rre(r10, id) == doctest::Approx(10.0));
    CHECK(rte(r10, id) == doctest::Approx(5.0));
    Pose flipped = r10;
    flipped.q = {-r10.q.w, -r10.q.x, -r10.q.y, -r10.q.z};
    CHECK(rre(flipped, r10) < 1e-6);
    const Pose half(Quaternion::from_axis_angle({0, 1, 0}, std::numbers::pi), {0, 0, 0});
    CHECK(rre(half, id) == doctest::Approx(180.0));
}

TEST_CASE("recall uses strict thresholds") {
    const std::vector<EvalRecord> r{rec("a", 1, 0.5), rec("b", 5, 0.1), rec("c", 0.5, 2), rec("d", 6, 3)};
    const RecallSummary s = registration_recall(r, 5, 2);
    CHECK(s.recall == doctest::Approx(0.25));
    CHECK(s.successes.count == 1);
    CHECK(s.successes.rre_mean == 1.0);
    CHECK(s.successes.rre_std == 0.0);
    CHECK(s.all.count == 4);
    CHECK(s.all.rre_mean == doctest::Approx(3.125));
    CHECK(registration_recall(r, 10, 10).recall == 1.0);
    CHECK(registration_recall(r, 0.1, 0.1).recall == 0.0);
    CHECK(registration_recall(r, 0.1, 0.1).successes.count == 0);
    CHECK_THROWS(registration_recall({}, 5, 2));
    CHECK_THROWS(registration_recall(r, 0, 2));
    CHECK_THROWS(registration_recall(r, 5, -1));
}

TEST_CASE("population statistics") {
    const std::vector<EvalRecord> r{rec("a", 1, 0.2), rec("b", 3, 0.4)};
    const RecallSummary s = registration_recall(r, 5, 2);
    CHECK(s.successes.rre_std == doctest::Approx(1.0));
    CHECK(s.successes.rte_mean == doctest::Approx(0.3));
    CHECK(s.successes.rte_std == doctest::Approx(0.1));
}

TEST_CASE("recall agrees with an independent recount") {
    std::mt19937_64 rng(4);
    std::exponential_distribution<double> er(0.3), et(1.0);
    std::vector<EvalRecord> r;
    for (int i = 0; i < 500; ++i) r.push_back(rec("p" + std::to_string(i), er(rng), et(rng)));
    for (double a : {0.5, 1.0, 5.0, 20.0}) {
        for (double b : {0.1, 1.0, 2.0}) {
            CHECK(registration_recall(r, a, b).recall == oracle::recount_recall(r, a, b));
        }
    }
}

TEST_CASE("recall curve is monotone") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0, 10);
    std::vector<EvalRecord> r;
    for (int i = 0; i < 100; ++i) r.push_back(rec("p", u(rng), u(rng) / 5));
    const RecallCurve c = recall_curve(r, {10, 1, 5}, {0.5, 2});
    CHECK(c.rre_thresholds == std::vector<double>{1, 5, 10});
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < 2; ++j) {
            if (i > 0) CHECK(c.at(i, j) >= c.at(i - 1, j));
            if (j > 0) CHECK(c.at(i, j) >= c.at(i, j - 1));
            CHECK(c.at(i, j) == oracle::recount_recall(r, c.rre_thresholds[i], c.rte_thresholds[j]));
        }
    }
    CHECK(c.to_table().find("rre") != std::string::npos);
}

TEST_CASE("normalized time") {
    CHECK(normalized_time({rec("a", 0, 0, 20, 2000), rec("b", 0, 0, 30, 1000)}) == doctest::Approx(20.0));
    CHECK_THROWS(normalized_time({rec("a", 0, 0, 20, 0)}));
}

TEST_CASE("results file round trip") {
    const auto path = std::filesystem::temp_directory_path() / "regformer_results.txt";
    const std::vector<EvalRecord> r{rec("x1", 0.25, 0.125, 12.5, 4096), rec("x2", 3, 1.5, 8, 100)};
    write_results(path, r, {"checkpoint model.ckpt", "seed 7"});
    std::ifstream is(path);
    std::string first;
    std::getline(is, first);
    CHECK(first == "# checkpoint model.ckpt");
    const auto back = read_results(path);
    REQUIRE(back.size() == 2);
    CHECK(back[0].pair_id == "x1");
    CHECK(back[0].rre_deg == 0.25);
    CHECK(back[1].n_points == 100);
    CHECK_THROWS(read_results(std::filesystem::temp_directory_path() / "regformer_no_such_results.txt"));
}
