// SPDX-License-Identifier: Apache-2.0
//
// Multi-scale uncertainty-weighted pose loss, Adam, and the synthetic overfit
// harness used to check the whole pipeline end to end.

#pragma once

#include "regformer/model.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace regformer {

/// Learnable balance terms plus fixed per-layer weights (indexed by layer 0..3).
struct LossState {
    Tensor k_t;
    Tensor k_r;
    std::array<double, 4> alpha{1.6, 0.8, 0.4, 0.2};

    LossState() : LossState(0.0, -2.5) {}
    LossState(double kt, double kr);

    void collect(NamedParameters& out) const;
};

struct LayerLoss {
    Tensor loss;
    double l_trans = 0.0;
    double l_rot = 0.0;
};

/// L_trans = ||t - t_gt||_1, L_rot = ||q/|q| - q_gt||_2 with q_gt sign-aligned to q,
/// loss = L_trans e^{-k_t} + k_t + L_rot e^{-k_r} + k_r.
LayerLoss layer_loss(const PoseTensor& pred, const Pose& gt, const LossState& state);

/// Σ_l alpha[l] * layer_loss(l). `terms` receives the per-layer parts in output order.
Tensor total_loss(const ForwardOutput& out, const Pose& gt, const LossState& state,
                  std::vector<LayerLoss>* terms = nullptr);

struct AdamConfig {
    double lr = 1e-3;
    double lr_floor = 1e-5;
    std::size_t decay_steps = 200000;  // steps for lr to reach lr_floor
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    double lr_at(std::size_t step) const;
};

class Adam {
public:
    Adam(NamedParameters params, AdamConfig cfg);

    /// Applies one update from the accumulated gradients multiplied by grad_scale.
    /// Non-finite gradients skip the update and return false.
    bool step(double grad_scale = 1.0);
    void zero_grad();

    std::size_t steps_taken() const { return t_; }
    std::size_t skipped() const { return skipped_; }
    double current_lr() const { return cfg_.lr_at(t_); }

private:
    NamedParameters params_;
    AdamConfig cfg_;
    std::vector<std::vector<double>> m_, v_;
    std::size_t t_ = 0;
    std::size_t skipped_ = 0;
};

struct TrainingPair {
    std::string id;
    PointCloud source;
    PointCloud target;
    Pose gt;  // maps source coordinates into the target frame
};

/// Target = synthetic scene, source = target moved by inverse(gt).
std::vector<TrainingPair> make_synthetic_pairs(std::size_t count, std::uint64_t seed, std::size_t points_per_scene,
                                               double max_rot_deg, double max_trans_m);

struct TrainConfig {
    std::size_t steps = 3000;
    std::size_t pairs = 4;
    std::size_t points_per_scene = 4096;
    double max_rot_deg = 10.0;
    double max_trans_m = 2.0;
    double lr = 1e-3;
    double lr_floor = 1e-5;
    std::size_t decay_steps = 0;  // 0: decay over the whole run
    double k_t = 0.0;
    double k_r = -2.5;
    std::array<double, 4> alpha{1.6, 0.8, 0.4, 0.2};
    std::uint64_t seed = 7;
    std::size_t report_every = 1;
};

struct StepRecord {
    std::size_t step = 0;
    double total = 0.0;
    std::vector<double> l_trans;  // coarsest layer first
    std::vector<double> l_rot;
    double k_t = 0.0;
    double k_r = 0.0;
    double lr = 0.0;
};

struct LayerError {
    std::size_t layer = 0;
    double rre_deg = 0.0;
    double rte_m = 0.0;
};

struct PairEvaluation {
    std::string id;
    std::vector<LayerError> layers;  // coarsest first
};

/// Per-layer errors of a trained model on the given pairs (no graph recorded).
std::vector<PairEvaluation> evaluate_pairs(const RegFormer& model, const std::vector<TrainingPair>& pairs);

struct OverfitResult {
    RegFormer model;
    LossState loss_state;
    std::vector<StepRecord> history;
    std::vector<PairEvaluation> final_errors;
    std::size_t skipped_steps = 0;
};

class TrainingDiverged : public NumericalError {
public:
    using NumericalError::NumericalError;
};

/// Full-batch training on `pairs`. On divergence, writes the last finite step
/// and parameters to diag_dir (when given) and throws TrainingDiverged.
OverfitResult overfit_run(const ModelConfig& model_cfg, const TrainConfig& cfg, const std::vector<TrainingPair>& pairs,
                          const std::optional<std::filesystem::path>& diag_dir = std::nullopt);

/// One line per recorded step: step total [l_trans l_rot per layer] k_t k_r lr.
void write_training_report(const std::filesystem::path& path, const OverfitResult& result);

}  // namespace regformer
