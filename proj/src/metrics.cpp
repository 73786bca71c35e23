// SPDX-License-Identifier: Apache-2.0

#include "regformer/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace regformer {

double rre(const Pose& pred, const Pose& gt) {
    const double c = std::clamp(std::abs(dot(pred.q, gt.q)), 0.0, 1.0);
    return 2.0 * std::acos(c) * 180.0 / std::numbers::pi;
}

double rte(const Pose& pred, const Pose& gt) { return norm(pred.t - gt.t); }

namespace {

void validate_thresholds(double a, double b) {
    if (!(a > 0.0) || !(b > 0.0)) throw std::invalid_argument("recall thresholds must be positive");
}

ErrorStats stats_of(const std::vector<const EvalRecord*>& rs) {
    ErrorStats s;
    s.count = rs.size();
    if (rs.empty()) return s;
    const double n = static_cast<double>(rs.size());
    for (const auto* r : rs) {
        s.rre_mean += r->rre_deg / n;
        s.rte_mean += r->rte_m / n;
    }
    for (const auto* r : rs) {
        s.rre_std += (r->rre_deg - s.rre_mean) * (r->rre_deg - s.rre_mean) / n;
        s.rte_std += (r->rte_m - s.rte_mean) * (r->rte_m - s.rte_mean) / n;
    }
    s.rre_std = std::sqrt(s.rre_std);
    s.rte_std = std::sqrt(s.rte_std);
    return s;
}

bool success(const EvalRecord& r, double rre_thresh, double rte_thresh) {
    return r.rre_deg < rre_thresh && r.rte_m < rte_thresh;
}

}  // namespace

RecallSummary registration_recall(const std::vector<EvalRecord>& records, double rre_thresh_deg, double rte_thresh_m) {
    if (records.empty()) throw std::invalid_argument("registration_recall: no records");
    validate_thresholds(rre_thresh_deg, rte_thresh_m);
    std::vector<const EvalRecord*> ok, all;
    for (const auto& r : records) {
        all.push_back(&r);
        if (success(r, rre_thresh_deg, rte_thresh_m)) ok.push_back(&r);
    }
    RecallSummary s;
    s.recall = static_cast<double>(ok.size()) / static_cast<double>(records.size());
    s.successes = stats_of(ok);
    s.all = stats_of(all);
    return s;
}

RecallCurve recall_curve(const std::vector<EvalRecord>& records, std::vector<double> rre_thresholds,
                         std::vector<double> rte_thresholds) {
    if (records.empty()) throw std::invalid_argument("recall_curve: no records");
    std::sort(rre_thresholds.begin(), rre_thresholds.end());
    std::sort(rte_thresholds.begin(), rte_thresholds.end());
    RecallCurve c;
    c.rre_thresholds = std::move(rre_thresholds);
    c.rte_thresholds = std::move(rte_thresholds);
    for (double a : c.rre_thresholds) {
        for (double b : c.rte_thresholds) c.recall.push_back(registration_recall(records, a, b).recall);
    }
    return c;
}

std::string RecallCurve::to_table() const {
    std::ostringstream os;
    os << "# recall rows: RRE threshold (deg), columns: RTE threshold (m)\n";
    os << "rre\\rte";
    for (double b : rte_thresholds) os << ' ' << b;
    os << '\n' << std::fixed << std::setprecision(4);
    for (std::size_t i = 0; i < rre_thresholds.size(); ++i) {
        os << std::defaultfloat << rre_thresholds[i] << std::fixed;
        for (std::size_t j = 0; j < rte_thresholds.size(); ++j) os << ' ' << at(i, j);
        os << '\n';
    }
    return os.str();
}

double normalized_time(const std::vector<EvalRecord>& records) {
    if (records.empty()) throw std::invalid_argument("normalized_time: no records");
    double acc = 0.0;
    for (const auto& r : records) {
        if (r.n_points == 0) throw std::invalid_argument("normalized_time: record '" + r.pair_id + "' has zero points");
        acc += r.time_ms / (static_cast<double>(r.n_points) / 1000.0);
    }
    return acc / static_cast<double>(records.size());
}

void write_results(const std::filesystem::path& path, const std::vector<EvalRecord>& records,
                   const std::vector<std::string>& header_lines) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    for (const auto& h : header_lines) os << "# " << h << '\n';
    os << std::setprecision(10);
    for (const auto& r : records) {
        os << r.pair_id << ' ' << r.rre_deg << ' ' << r.rte_m << ' ' << r.time_ms << ' ' << r.n_points << '\n';
    }
    if (!os) throw std::runtime_error("failed writing " + path.string());
}

std::vector<EvalRecord> read_results(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot read " + path.string());
    std::vector<EvalRecord> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        EvalRecord r;
        if (!(ls >> r.pair_id >> r.rre_deg >> r.rte_m >> r.time_ms >> r.n_points)) {
            throw FormatError(path.string() + ":" + std::to_string(lineno) + ": malformed result line");
        }
        out.push_back(r);
    }
    return out;
}

}  // namespace regformer
