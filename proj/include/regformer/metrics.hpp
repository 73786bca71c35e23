// SPDX-License-Identifier: Apache-2.0
//
// Registration metrics: rotation / translation errors, recall and timing.

#pragma once

#include "regformer/pointcloud.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace regformer {

struct EvalRecord {
    std::string pair_id;
    double rre_deg = 0.0;
    double rte_m = 0.0;
    double time_ms = 0.0;
    std::size_t n_points = 0;
};

/// 2 acos(|<q_pred, q_gt>|) in degrees.
double rre(const Pose& pred, const Pose& gt);
double rte(const Pose& pred, const Pose& gt);

struct ErrorStats {
    double rre_mean = 0.0, rre_std = 0.0;
    double rte_mean = 0.0, rte_std = 0.0;
    std::size_t count = 0;
};

struct RecallSummary {
    double recall = 0.0;
    ErrorStats successes;  // population statistics over successful pairs
    ErrorStats all;        // same over every pair
};

/// Success means rre < rre_thresh and rte < rte_thresh (strict).
RecallSummary registration_recall(const std::vector<EvalRecord>& records, double rre_thresh_deg, double rte_thresh_m);

struct RecallCurve {
    std::vector<double> rre_thresholds;
    std::vector<double> rte_thresholds;
    std::vector<double> recall;  // row-major [rre][rte]

    double at(std::size_t i, std::size_t j) const { return recall[i * rte_thresholds.size() + j]; }
    std::string to_table() const;
};

RecallCurve recall_curve(const std::vector<EvalRecord>& records, std::vector<double> rre_thresholds,
                         std::vector<double> rte_thresholds);

/// Mean over records of time_ms / (n_points / 1000).
double normalized_time(const std::vector<EvalRecord>& records);

/// "pair_id RRE_deg RTE_m time_ms n_points" lines; '#' lines are comments.
void write_results(const std::filesystem::path& path, const std::vector<EvalRecord>& records,
                   const std::vector<std::string>& header_lines);
std::vector<EvalRecord> read_results(const std::filesystem::path& path);

}  // namespace regformer
