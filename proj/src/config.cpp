// SPDX-License-Identifier: Apache-2.0

#include "regformer/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace regformer {

namespace pt = boost::property_tree;

namespace {

const std::map<std::string, std::set<std::string>>& schema() {
    static const std::map<std::string, std::set<std::string>> s = {
        {"grid", {"preset", "height", "width", "fov_down_deg", "fov_up_deg"}},
        {"encoder",
         {"channels", "window", "shift", "patch_rows", "patch_cols", "stages", "head_width", "mlp_ratio", "use_mask"}},
        {"association", {"cross_attention", "all_to_all", "knn"}},
        {"training",
         {"steps", "pairs", "points_per_scene", "max_rot_deg", "max_trans_m", "lr", "lr_floor", "decay_steps", "k_t",
          "k_r", "alpha", "report_every"}},
        {"run", {"seed", "precision", "threads"}},
        {"paths", {"checkpoint", "output"}},
    };
    return s;
}

template <typename T>
void read(const pt::ptree& tree, const std::string& key, T& value) {
    if (auto v = tree.get_optional<std::string>(key)) {
        try {
            value = tree.get<T>(key);
        } catch (const pt::ptree_bad_data&) {
            throw ConfigError("config key '" + key + "' has invalid value '" + *v + "'");
        }
    }
}

void read_bool(const pt::ptree& tree, const std::string& key, bool& value) {
    if (auto v = tree.get_optional<std::string>(key)) {
        if (*v == "true" || *v == "1") value = true;
        else if (*v == "false" || *v == "0") value = false;
        else throw ConfigError("config key '" + key + "' expects true/false, got '" + *v + "'");
    }
}

}  // namespace

RunConfig parse_run_config(const std::string& text) {
    pt::ptree tree;
    std::istringstream is(text);
    try {
        pt::read_ini(is, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError(std::string("config parse error: ") + e.what());
    }
    for (const auto& [section, body] : tree) {
        auto it = schema().find(section);
        if (it == schema().end()) throw ConfigError("unknown config section [" + section + "]");
        if (body.empty() && !body.data().empty()) throw ConfigError("config key '" + section + "' outside a section");
        for (const auto& [key, v] : body) {
            if (!it->second.count(key)) throw ConfigError("unknown config key '" + section + "." + key + "'");
        }
    }

    RunConfig cfg;
    ModelConfig& m = cfg.model;
    std::string preset = grid_preset_name(m.preset);
    read(tree, "grid.preset", preset);
    try {
        m.preset = parse_grid_preset(preset);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    if (m.preset == GridPreset::custom) {
        std::size_t h = 0, w = 0;
        double down = -24.8, up = 2.0;
        read(tree, "grid.height", h);
        read(tree, "grid.width", w);
        read(tree, "grid.fov_down_deg", down);
        read(tree, "grid.fov_up_deg", up);
        try {
            m.custom_grid = make_grid(h, w, down, up);
        } catch (const std::invalid_argument& e) {
            throw ConfigError(e.what());
        }
    }
    EncoderConfig& e = m.encoder;
    read(tree, "encoder.channels", e.channels);
    read(tree, "encoder.window", e.window);
    read(tree, "encoder.shift", e.shift);
    read(tree, "encoder.patch_rows", e.patch_rows);
    read(tree, "encoder.patch_cols", e.patch_cols);
    read(tree, "encoder.stages", e.stages);
    read(tree, "encoder.head_width", e.head_width);
    read(tree, "encoder.mlp_ratio", e.mlp_ratio);
    read_bool(tree, "encoder.use_mask", e.use_mask);
    read_bool(tree, "association.cross_attention", m.use_cross_attention);
    read_bool(tree, "association.all_to_all", m.all_to_all);
    read(tree, "association.knn", m.knn);

    TrainConfig& t = cfg.train;
    read(tree, "training.steps", t.steps);
    read(tree, "training.pairs", t.pairs);
    read(tree, "training.points_per_scene", t.points_per_scene);
    read(tree, "training.max_rot_deg", t.max_rot_deg);
    read(tree, "training.max_trans_m", t.max_trans_m);
    read(tree, "training.lr", t.lr);
    read(tree, "training.lr_floor", t.lr_floor);
    read(tree, "training.decay_steps", t.decay_steps);
    read(tree, "training.k_t", t.k_t);
    read(tree, "training.k_r", t.k_r);
    read(tree, "training.report_every", t.report_every);
    if (auto a = tree.get_optional<std::string>("training.alpha")) {
        std::istringstream as(*a);
        std::string tok;
        std::size_t i = 0;
        while (std::getline(as, tok, ',')) {
            if (i >= t.alpha.size()) throw ConfigError("training.alpha expects 4 values");
            try {
                t.alpha[i++] = std::stod(tok);
            } catch (const std::exception&) {
                throw ConfigError("training.alpha has invalid value '" + tok + "'");
            }
        }
        if (i != t.alpha.size()) throw ConfigError("training.alpha expects 4 values");
    }
    if (!(t.lr > 0.0)) throw ConfigError("training.lr must be positive");

    read(tree, "run.seed", cfg.seed);
    t.seed = cfg.seed;
    std::string prec = cfg.precision == Precision::f32 ? "f32" : "f64";
    read(tree, "run.precision", prec);
    if (prec == "f32") cfg.precision = Precision::f32;
    else if (prec == "f64") cfg.precision = Precision::f64;
    else throw ConfigError("run.precision must be f32 or f64, got '" + prec + "'");
    read(tree, "run.threads", cfg.threads);
    if (cfg.threads == 0) throw ConfigError("run.threads must be at least 1");
    read(tree, "paths.checkpoint", cfg.checkpoint);
    read(tree, "paths.output", cfg.output);
    return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot read config " + path.string());
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_run_config(ss.str());
}

std::string format_run_config(const RunConfig& cfg) {
    const ModelConfig& m = cfg.model;
    const EncoderConfig& e = m.encoder;
    const TrainConfig& t = cfg.train;
    auto b = [](bool v) { return v ? "true" : "false"; };
    std::ostringstream os;
    os.precision(17);
    os << "[grid]\n"
       << "; kitti64x1792, desk16x64 or custom\n"
       << "preset = " << grid_preset_name(m.preset) << '\n';
    if (m.preset == GridPreset::custom) {
        const ProjectionGrid& g = m.custom_grid;
        const double deg = 180.0 / 3.14159265358979323846;
        os << "height = " << g.height << "\nwidth = " << g.width << '\n'
           << "fov_down_deg = " << -g.v_offset * g.dphi * deg << '\n'
           << "fov_up_deg = " << (static_cast<double>(g.height - 1) - g.v_offset) * g.dphi * deg << '\n';
    }
    os << "\n[encoder]\n"
       << "channels = " << e.channels << '\n'
       << "; reference windows are 4x4 tokens shifted by 2\n"
       << "window = " << e.window << "\nshift = " << e.shift << '\n'
       << "patch_rows = " << e.patch_rows << "\npatch_cols = " << e.patch_cols << '\n'
       << "stages = " << e.stages << "\nhead_width = " << e.head_width << "\nmlp_ratio = " << e.mlp_ratio << '\n'
       << "use_mask = " << b(e.use_mask) << '\n'
       << "\n[association]\n"
       << "cross_attention = " << b(m.use_cross_attention) << "\nall_to_all = " << b(m.all_to_all) << '\n'
       << "knn = " << m.knn << '\n'
       << "\n[training]\n"
       << "steps = " << t.steps << "\npairs = " << t.pairs << "\npoints_per_scene = " << t.points_per_scene << '\n'
       << "max_rot_deg = " << t.max_rot_deg << "\nmax_trans_m = " << t.max_trans_m << '\n'
       << "; reference schedule: 0.001 decaying exponentially to 0.00001\n"
       << "lr = " << t.lr << "\nlr_floor = " << t.lr_floor << '\n'
       << "; 0 decays over the whole run (reference: 200000)\n"
       << "decay_steps = " << t.decay_steps << '\n'
       << "; reference initial values 0.0 and -2.5\n"
       << "k_t = " << t.k_t << "\nk_r = " << t.k_r << '\n'
       << "; per-layer loss weights for layers 0,1,2,3 (reference 1.6,0.8,0.4,0.2)\n"
       << "alpha = " << t.alpha[0] << ',' << t.alpha[1] << ',' << t.alpha[2] << ',' << t.alpha[3] << '\n'
       << "report_every = " << t.report_every << '\n'
       << "\n[run]\n"
       << "seed = " << cfg.seed << "\nprecision = " << (cfg.precision == Precision::f32 ? "f32" : "f64") << '\n'
       << "threads = " << cfg.threads << '\n'
       << "\n[paths]\n"
       << "checkpoint = " << cfg.checkpoint << "\noutput = " << cfg.output << '\n';
    return os.str();
}

void save_run_config(const std::filesystem::path& path, const RunConfig& cfg) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << format_run_config(cfg);
}

}  // namespace regformer
