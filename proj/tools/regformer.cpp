// SPDX-License-Identifier: Apache-2.0
//
// regformer: command-line driver for projection, synthetic data, training,
// registration, evaluation, ablations and scaling benchmarks.

#include "regformer/config.hpp"
#include "regformer/metrics.hpp"
#include "regformer/model.hpp"
#include "regformer/training.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

namespace fs = std::filesystem;
using namespace regformer;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumerical = 3;

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct CommonOptions {
    std::string config;
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::string out;
    std::size_t steps = 0;
    bool steps_set = false;
    std::string precision;
    std::size_t threads = 0;
};

RunConfig resolve_config(const CommonOptions& o, const std::string& fallback_config = "") {
    RunConfig cfg;
    if (!o.config.empty()) cfg = load_run_config(o.config);
    else if (!fallback_config.empty() && fs::exists(fallback_config)) cfg = load_run_config(fallback_config);
    if (o.seed_set) {
        cfg.seed = o.seed;
        cfg.train.seed = o.seed;
    }
    if (!o.out.empty()) cfg.output = o.out;
    if (o.steps_set) cfg.train.steps = o.steps;
    if (!o.precision.empty()) cfg.precision = o.precision == "f32" ? Precision::f32 : Precision::f64;
    if (o.threads > 0) cfg.threads = o.threads;
    set_precision(cfg.precision);
    return cfg;
}

double elapsed_ms(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

void print_pose(std::ostream& os, const Pose& p) {
    os << std::setprecision(9);
    const auto row = to_kitti_row(p);
    for (std::size_t i = 0; i < row.size(); ++i) os << (i ? " " : "") << row[i];
    os << '\n' << p.q.w << ' ' << p.q.x << ' ' << p.q.y << ' ' << p.q.z << ' ' << p.t[0] << ' ' << p.t[1] << ' '
       << p.t[2] << '\n';
}

PointCloud load_cloud(const fs::path& path) {
    if (!fs::exists(path)) throw DataError("no such file: " + path.string());
    LoadReport report;
    PointCloud pc = read_kitti_bin(path, &report);
    for (const auto& w : report.warnings) std::cerr << "warning: " << w << '\n';
    if (report.dropped_nonfinite + report.dropped_zero > 0) {
        std::cerr << "warning: " << path.string() << ": dropped " << report.dropped_nonfinite << " non-finite and "
                  << report.dropped_zero << " zero points\n";
    }
    return pc;
}

RegFormer load_model(const RunConfig& cfg, const fs::path& checkpoint) {
    if (checkpoint.empty()) throw DataError("no checkpoint given");
    if (!fs::exists(checkpoint)) throw DataError("no such checkpoint: " + checkpoint.string());
    RegFormer model(cfg.model, cfg.seed);
    load_checkpoint(checkpoint, model.parameters());
    return model;
}

std::string checkpoint_config(const std::string& checkpoint) {
    return checkpoint.empty() ? "" : (fs::path(checkpoint).parent_path() / "config.ini").string();
}

// ---------------------------------------------------------------- project

int cmd_project(const CommonOptions& o, const std::string& input) {
    const RunConfig cfg = resolve_config(o);
    const PointCloud pc = load_cloud(input);
    if (pc.size() == 0) std::cerr << "warning: " << input << " contains no points; writing an empty dump\n";
    const Projection proj = project_cylindrical(pc, cfg.model.grid());
    fs::create_directories(cfg.output);
    const fs::path dump = fs::path(cfg.output) / "projection.bin";
    write_projection_dump(dump, proj.image, proj.mask);
    const RoundTripStats rt = check_round_trip(proj.image, proj.mask);
    const double pct = rt.valid_pixels == 0 ? 100.0 : 100.0 * static_cast<double>(rt.reprojected_ok) /
                                                          static_cast<double>(rt.valid_pixels);
    std::cout << "grid " << proj.image.height() << "x" << proj.image.width() << '\n'
              << "points " << pc.size() << " landed " << proj.stats.landed << " occluded " << proj.stats.occluded
              << " out_of_fov " << proj.stats.dropped_out_of_fov << " zero_range " << proj.stats.dropped_zero_range
              << '\n'
              << "valid_pixels " << rt.valid_pixels << " mask_mismatches " << rt.mask_mismatches << '\n'
              << std::fixed << std::setprecision(2) << pct << "% round-trip (" << rt.reprojected_ok << "/"
              << rt.valid_pixels << ")\n"
              << "dump " << dump.string() << '\n';
    return rt.reprojected_ok == rt.valid_pixels && rt.mask_mismatches == 0 ? kExitOk : kExitNumerical;
}

// ---------------------------------------------------------------- synth

int cmd_synth(const CommonOptions& o, std::size_t pairs) {
    const RunConfig cfg = resolve_config(o);
    const fs::path dir = cfg.output;
    fs::create_directories(dir);
    const auto data = make_synthetic_pairs(pairs, cfg.seed, cfg.train.points_per_scene, cfg.train.max_rot_deg,
                                           cfg.train.max_trans_m);
    std::ofstream list(dir / "pairs.txt");
    list << "# id source target gt(3x4 row-major, maps source into target)\n" << std::setprecision(17);
    for (const auto& p : data) {
        const fs::path src = dir / (p.id + "_src.bin");
        const fs::path tgt = dir / (p.id + "_tgt.bin");
        write_kitti_bin(src, p.source);
        write_kitti_bin(tgt, p.target);
        list << p.id << ' ' << src.string() << ' ' << tgt.string();
        for (double v : to_kitti_row(p.gt)) list << ' ' << v;
        list << '\n';
    }
    std::cout << "wrote " << data.size() << " pairs to " << (dir / "pairs.txt").string() << '\n';
    return kExitOk;
}

// ---------------------------------------------------------------- overfit

void print_final_errors(const OverfitResult& r) {
    std::cout << std::fixed << std::setprecision(4);
    for (const auto& e : r.final_errors) {
        std::cout << e.id;
        for (const auto& l : e.layers) std::cout << "  L" << l.layer << " RRE " << l.rre_deg << " RTE " << l.rte_m;
        std::cout << '\n';
    }
    std::cout << std::defaultfloat;
}

int cmd_overfit(const CommonOptions& o) {
    const RunConfig cfg = resolve_config(o);
    const fs::path dir = cfg.output;
    fs::create_directories(dir);
    const auto pairs = make_synthetic_pairs(cfg.train.pairs, cfg.seed, cfg.train.points_per_scene,
                                            cfg.train.max_rot_deg, cfg.train.max_trans_m);
    const auto t0 = std::chrono::steady_clock::now();
    const OverfitResult r = overfit_run(cfg.model, cfg.train, pairs, dir);
    save_checkpoint(dir / "model.ckpt", r.model.parameters());
    RunConfig saved = cfg;
    saved.checkpoint = (dir / "model.ckpt").string();
    save_run_config(dir / "config.ini", saved);
    write_training_report(dir / "report.txt", r);
    std::cout << "steps " << cfg.train.steps << " skipped " << r.skipped_steps << " time_s "
              << elapsed_ms(t0) / 1000.0 << '\n'
              << "initial_loss " << r.history.front().total << " final_loss " << r.history.back().total << '\n';
    print_final_errors(r);
    std::cout << "checkpoint " << (dir / "model.ckpt").string() << '\n';
    return kExitOk;
}

// ---------------------------------------------------------------- register

int cmd_register(const CommonOptions& o, const std::string& checkpoint, const std::string& src,
                 const std::string& tgt) {
    const RunConfig cfg = resolve_config(o, checkpoint_config(checkpoint));
    const RegFormer model = load_model(cfg, checkpoint);
    const ProjectionGrid grid = cfg.model.grid();
    NoGradGuard guard;
    const ForwardOutput out = model.forward(prepare_frame(load_cloud(src), grid), prepare_frame(load_cloud(tgt), grid));
    print_pose(std::cout, out.final_pose().value());
    return kExitOk;
}

// ---------------------------------------------------------------- eval

struct PairSpec {
    std::string id;
    std::string source, target;
    Pose gt;
};

std::vector<PairSpec> read_pair_list(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot read pair list " + path.string());
    std::vector<PairSpec> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        PairSpec p;
        std::array<double, 12> row{};
        if (!(ls >> p.id >> p.source >> p.target)) throw DataError(path.string() + ":" + std::to_string(lineno) +
                                                                   ": expected 'id source target gt[12]'");
        for (double& v : row) {
            if (!(ls >> v)) throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected 12 pose values");
        }
        p.gt = from_kitti_row(row);
        out.push_back(std::move(p));
    }
    if (out.empty()) throw DataError("pair list " + path.string() + " is empty");
    return out;
}

std::vector<EvalRecord> evaluate_list(const RegFormer& model, const std::vector<PairSpec>& pairs, std::size_t threads) {
    const ProjectionGrid grid = model.config().grid();
    std::vector<EvalRecord> records(pairs.size());
    std::vector<std::string> errors(pairs.size());
    std::size_t next = 0;
    std::mutex mu;
    auto worker = [&] {
        NoGradGuard guard;
        for (;;) {
            std::size_t i;
            {
                std::lock_guard lock(mu);
                if (next >= pairs.size()) return;
                i = next++;
            }
            try {
                const PointCloud s = load_cloud(pairs[i].source);
                const PointCloud t = load_cloud(pairs[i].target);
                const auto t0 = std::chrono::steady_clock::now();
                const ForwardOutput out = model.forward(prepare_frame(s, grid), prepare_frame(t, grid));
                const double ms = elapsed_ms(t0);
                const Pose pred = out.final_pose().value();
                records[i] = {pairs[i].id, rre(pred, pairs[i].gt), rte(pred, pairs[i].gt), ms, s.size() + t.size()};
            } catch (const std::exception& e) {
                errors[i] = pairs[i].id + ": " + e.what();
            }
        }
    };
    std::vector<std::thread> pool;
    for (std::size_t k = 1; k < std::min(threads, pairs.size()); ++k) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();
    for (const auto& e : errors) {
        if (!e.empty()) throw DataError(e);
    }
    return records;
}

int cmd_eval(const CommonOptions& o, const std::string& checkpoint, const std::string& list, double rre_thresh,
             double rte_thresh) {
    const RunConfig cfg = resolve_config(o, checkpoint_config(checkpoint));
    if (!(rre_thresh > 0.0) || !(rte_thresh > 0.0)) throw CLI::ValidationError("thresholds must be positive");
    const auto pairs = read_pair_list(list);
    const RegFormer model = load_model(cfg, checkpoint);
    const auto records = evaluate_list(model, pairs, cfg.threads);
    const RecallSummary s = registration_recall(records, rre_thresh, rte_thresh);
    std::ostringstream thr;
    thr << "thresholds rre_deg " << rre_thresh << " rte_m " << rte_thresh;
    std::ostringstream sum;
    sum << std::setprecision(6) << "recall " << s.recall << " success_rre_mean " << s.successes.rre_mean
        << " success_rre_std " << s.successes.rre_std << " success_rte_mean " << s.successes.rte_mean
        << " success_rte_std " << s.successes.rte_std;
    std::ostringstream all;
    all << std::setprecision(6) << "all_rre_mean " << s.all.rre_mean << " all_rre_std " << s.all.rre_std
        << " all_rte_mean " << s.all.rte_mean << " all_rte_std " << s.all.rte_std;
    std::ostringstream nt;
    nt << std::setprecision(6) << "normalized_time_ms_per_kpts " << normalized_time(records);

    fs::create_directories(cfg.output);
    write_results(fs::path(cfg.output) / "results.txt", records,
                  {thr.str(), "pair_id RRE_deg RTE_m time_ms n_points", sum.str(), all.str(), nt.str()});
    const RecallCurve curve =
        recall_curve(records, {0.5, 1, 2, 3, 4, 5, 7.5, 10}, {0.1, 0.25, 0.5, 1, 1.5, 2, 3});
    std::ofstream(fs::path(cfg.output) / "recall_curve.txt") << "# " << thr.str() << '\n' << curve.to_table();
    std::cout << "# " << thr.str() << '\n' << "# " << sum.str() << '\n' << "# " << all.str() << '\n'
              << "# " << nt.str() << '\n';
    return kExitOk;
}

// ---------------------------------------------------------------- ablate

int cmd_ablate(const CommonOptions& o, const std::string& variant_list) {
    const RunConfig base = resolve_config(o);
    std::vector<std::string> variants;
    std::stringstream vs(variant_list);
    for (std::string v; std::getline(vs, v, ',');) {
        if (v != "full" && v != "no-mask" && v != "no-cross" && v != "knn") {
            throw CLI::ValidationError("unknown variant '" + v + "' (expected full, no-mask, no-cross, knn)");
        }
        variants.push_back(v);
    }
    if (variants.empty()) throw CLI::ValidationError("no variants given");
    const auto pairs = make_synthetic_pairs(base.train.pairs, base.seed, base.train.points_per_scene,
                                            base.train.max_rot_deg, base.train.max_trans_m);
    std::ostringstream table;
    table << "variant final_loss mean_rre_deg mean_rte_m max_rre_deg max_rte_m time_s\n";
    for (const auto& v : variants) {
        ModelConfig mc = base.model;
        if (v == "no-mask") mc.encoder.use_mask = false;
        if (v == "no-cross") mc.use_cross_attention = false;
        if (v == "knn") mc.all_to_all = false;
        const auto t0 = std::chrono::steady_clock::now();
        const OverfitResult r = overfit_run(mc, base.train, pairs, fs::path(base.output) / v);
        double mean_rre = 0, mean_rte = 0, max_rre = 0, max_rte = 0;
        for (const auto& e : r.final_errors) {
            const LayerError& l = e.layers.back();
            mean_rre += l.rre_deg / static_cast<double>(r.final_errors.size());
            mean_rte += l.rte_m / static_cast<double>(r.final_errors.size());
            max_rre = std::max(max_rre, l.rre_deg);
            max_rte = std::max(max_rte, l.rte_m);
        }
        table << v << ' ' << r.history.back().total << ' ' << mean_rre << ' ' << mean_rte << ' ' << max_rre << ' '
              << max_rte << ' ' << elapsed_ms(t0) / 1000.0 << '\n';
    }
    fs::create_directories(base.output);
    std::ofstream(fs::path(base.output) / "ablation.txt") << table.str();
    std::cout << table.str();
    return kExitOk;
}

// ---------------------------------------------------------------- bench

std::pair<std::size_t, std::size_t> parse_size(const std::string& s) {
    const auto x = s.find('x');
    if (x == std::string::npos) throw CLI::ValidationError("size '" + s + "' is not HxW");
    try {
        return {std::stoul(s.substr(0, x)), std::stoul(s.substr(x + 1))};
    } catch (const std::exception&) {
        throw CLI::ValidationError("size '" + s + "' is not HxW");
    }
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
}

int cmd_bench(const CommonOptions& o, const std::string& size_list, std::size_t repeats) {
    const RunConfig cfg = resolve_config(o);
    std::vector<std::pair<std::size_t, std::size_t>> sizes;
    std::stringstream ss(size_list);
    for (std::string s; std::getline(ss, s, ',');) sizes.push_back(parse_size(s));
    if (sizes.empty()) throw CLI::ValidationError("no sizes given");
    NoGradGuard guard;
    std::cout << "height width tokens points encoder_ms ratio_vs_first bat_ms ms_per_kpts\n";
    double first = 0.0;
    for (std::size_t k = 0; k < sizes.size(); ++k) {
        const auto [h, w] = sizes[k];
        ModelConfig mc = cfg.model;
        mc.preset = GridPreset::custom;
        mc.custom_grid = make_grid(h, w, -24.8, 2.0);
        const RegFormer model(mc, cfg.seed);
        const PointCloud pc = synth_scene(cfg.seed, h * w * 2);
        const FrameInput in = prepare_frame(pc, mc.custom_grid);
        std::vector<double> enc, full;
        for (std::size_t r = 0; r < std::max<std::size_t>(1, repeats); ++r) {
            auto t0 = std::chrono::steady_clock::now();
            (void)model.encoder().encode(in.projection.image, in.projection.mask);
            enc.push_back(elapsed_ms(t0));
            t0 = std::chrono::steady_clock::now();
            (void)model.forward(in, in);
            full.push_back(elapsed_ms(t0));
        }
        const double e = median(enc), f = median(full);
        if (k == 0) first = e;
        const std::size_t tokens = (h / mc.encoder.patch_rows) * (w / mc.encoder.patch_cols);
        std::cout << h << ' ' << w << ' ' << tokens << ' ' << pc.size() << ' ' << std::fixed << std::setprecision(3)
                  << e << ' ' << e / first << ' ' << std::max(0.0, f - 2 * e) << ' '
                  << f / (2.0 * static_cast<double>(pc.size()) / 1000.0) << std::defaultfloat << '\n';
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"regformer: transformer-based point cloud registration"};
    app.require_subcommand(1);
    app.fallthrough();
    CommonOptions o;
    app.add_option("--config", o.config, "INI run configuration");
    app.add_option_function<std::uint64_t>(
        "--seed", [&](const std::uint64_t& s) { o.seed = s, o.seed_set = true; }, "random seed");
    app.add_option("--out", o.out, "output directory");
    app.add_option_function<std::size_t>(
        "--steps", [&](const std::size_t& s) { o.steps = s, o.steps_set = true; }, "training steps");
    app.add_option("--precision", o.precision, "f32 or f64")->check(CLI::IsMember({"f32", "f64"}));
    app.add_option("--threads", o.threads, "worker threads for evaluation")->check(CLI::PositiveNumber);

    std::string input, checkpoint, src, tgt, list, variants = "full,no-mask,no-cross,knn", sizes = "64x256,64x512";
    std::size_t pairs = 4, repeats = 5;
    double rre_thresh = 5.0, rte_thresh = 2.0;

    auto* project = app.add_subcommand("project", "project a .bin cloud and check the round trip");
    project->add_option("input", input, "KITTI .bin file")->required();
    auto* synth = app.add_subcommand("synth", "write synthetic source/target pairs and a pair list");
    synth->add_option("--pairs", pairs, "number of pairs");
    auto* overfit = app.add_subcommand("overfit", "train on synthetic pairs and write a checkpoint");
    auto* reg = app.add_subcommand("register", "estimate the pose between two clouds");
    reg->add_option("--checkpoint", checkpoint)->required();
    reg->add_option("source", src)->required();
    reg->add_option("target", tgt)->required();
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a pair list");
    eval->add_option("--checkpoint", checkpoint)->required();
    eval->add_option("pairs", list, "lines: id source.bin target.bin gt[12]")->required();
    eval->add_option("--rre-thresh", rre_thresh, "degrees");
    eval->add_option("--rte-thresh", rte_thresh, "meters");
    auto* ablate = app.add_subcommand("ablate", "overfit and evaluate model variants");
    ablate->add_option("--variants", variants, "comma list of full,no-mask,no-cross,knn");
    auto* bench = app.add_subcommand("bench", "time encoder and association across grid sizes");
    bench->add_option("--sizes", sizes, "comma list of HxW grids");
    bench->add_option("--repeats", repeats, "runs per size (median reported)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*project) return cmd_project(o, input);
        if (*synth) return cmd_synth(o, pairs);
        if (*overfit) return cmd_overfit(o);
        if (*reg) return cmd_register(o, checkpoint, src, tgt);
        if (*eval) return cmd_eval(o, checkpoint, list, rre_thresh, rte_thresh);
        if (*ablate) return cmd_ablate(o, variants);
        if (*bench) return cmd_bench(o, sizes, repeats);
    } catch (const CLI::ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return kExitNumerical;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitData;
    }
    return kExitUsage;
}
