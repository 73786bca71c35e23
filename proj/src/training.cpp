// SPDX-License-Identifier: Apache-2.0

#include "regformer/training.hpp"
#include "regformer/metrics.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <stdexcept>

namespace regformer {

LossState::LossState(double kt, double kr) : k_t(Tensor::scalar(kt, true)), k_r(Tensor::scalar(kr, true)) {}

void LossState::collect(NamedParameters& out) const {
    out.emplace_back("loss.k_t", k_t);
    out.emplace_back("loss.k_r", k_r);
}

LayerLoss layer_loss(const PoseTensor& pred, const Pose& gt, const LossState& state) {
    const Tensor t_gt = Tensor::vector({gt.t[0], gt.t[1], gt.t[2]});
    const Tensor q = pred.q / l2_norm(pred.q);
    const auto qv = q.values();
    const double d = qv[0] * gt.q.w + qv[1] * gt.q.x + qv[2] * gt.q.y + qv[3] * gt.q.z;
    const double s = d < 0.0 ? -1.0 : 1.0;
    const Tensor q_gt = Tensor::vector({s * gt.q.w, s * gt.q.x, s * gt.q.y, s * gt.q.z});

    const Tensor l_trans = sum_all(abs(pred.t - t_gt));
    const Tensor l_rot = l2_norm(q - q_gt);
    LayerLoss out;
    out.l_trans = l_trans.item();
    out.l_rot = l_rot.item();
    out.loss = l_trans * exp(neg(state.k_t)) + state.k_t + l_rot * exp(neg(state.k_r)) + state.k_r;
    return out;
}

Tensor total_loss(const ForwardOutput& out, const Pose& gt, const LossState& state, std::vector<LayerLoss>* terms) {
    if (out.layers.empty()) throw std::invalid_argument("total_loss: no layer predictions");
    Tensor total;
    for (const auto& lp : out.layers) {
        if (lp.layer >= state.alpha.size()) throw std::invalid_argument("total_loss: no weight for layer " +
                                                                         std::to_string(lp.layer));
        LayerLoss ll = layer_loss(lp.pose, gt, state);
        const Tensor weighted = scale(ll.loss, state.alpha[lp.layer]);
        total = total.defined() ? total + weighted : weighted;
        if (terms) terms->push_back(std::move(ll));
    }
    return total;
}

double AdamConfig::lr_at(std::size_t step) const {
    if (decay_steps == 0 || lr <= lr_floor) return lr;
    const double gamma = std::pow(lr_floor / lr, 1.0 / static_cast<double>(decay_steps));
    return std::max(lr_floor, lr * std::pow(gamma, static_cast<double>(step)));
}

Adam::Adam(NamedParameters params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    if (!(cfg_.lr > 0.0)) throw std::invalid_argument("learning rate must be positive");
    for (const auto& [name, p] : params_) {
        m_.emplace_back(p.numel(), 0.0);
        v_.emplace_back(p.numel(), 0.0);
    }
}

void Adam::zero_grad() {
    for (auto& [name, p] : params_) p.zero_grad();
}

bool Adam::step(double grad_scale) {
    for (const auto& [name, p] : params_) {
        for (double g : p.grad()) {
            if (!std::isfinite(g)) {
                ++skipped_;
                return false;
            }
        }
    }
    const double lr = cfg_.lr_at(t_);
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const bool round32 = precision() == Precision::f32;
    for (std::size_t k = 0; k < params_.size(); ++k) {
        Tensor& p = params_[k].second;
        const auto g = p.grad();
        auto x = p.mutable_values();
        auto& m = m_[k];
        auto& v = v_[k];
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double gi = g.empty() ? 0.0 : g[i] * grad_scale;
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
            x[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.eps);
            if (round32) x[i] = static_cast<double>(static_cast<float>(x[i]));
        }
    }
    return true;
}

std::vector<TrainingPair> make_synthetic_pairs(std::size_t count, std::uint64_t seed, std::size_t points_per_scene,
                                               double max_rot_deg, double max_trans_m) {
    std::vector<TrainingPair> pairs;
    for (std::size_t i = 0; i < count; ++i) {
        const std::uint64_t s = seed * 1000003ULL + i * 7919ULL;
        TrainingPair p;
        p.id = "pair" + std::to_string(i);
        p.target = synth_scene(s, points_per_scene);
        p.target.frame_id = p.id + ".tgt";
        p.gt = random_pose_sample(s + 1, max_rot_deg, max_trans_m);
        p.source = apply_rigid_transform(p.target, inverse(p.gt));
        p.source.frame_id = p.id + ".src";
        pairs.push_back(std::move(p));
    }
    return pairs;
}

std::vector<PairEvaluation> evaluate_pairs(const RegFormer& model, const std::vector<TrainingPair>& pairs) {
    NoGradGuard guard;
    const ProjectionGrid grid = model.config().grid();
    std::vector<PairEvaluation> out;
    for (const auto& p : pairs) {
        const ForwardOutput fo = model.forward(prepare_frame(p.source, grid), prepare_frame(p.target, grid));
        PairEvaluation e;
        e.id = p.id;
        for (const auto& lp : fo.layers) {
            const Pose pred = lp.pose.value();
            e.layers.push_back({lp.layer, rre(pred, p.gt), rte(pred, p.gt)});
        }
        out.push_back(std::move(e));
    }
    return out;
}

namespace {

void write_divergence(const std::filesystem::path& dir, const StepRecord* last, const NamedParameters& params,
                      const std::string& what) {
    std::filesystem::create_directories(dir);
    std::ofstream os(dir / "divergence.txt");
    os << "diverged: " << what << '\n';
    if (last) {
        os << "last finite step " << last->step << " total " << std::setprecision(17) << last->total << " k_t "
           << last->k_t << " k_r " << last->k_r << " lr " << last->lr << '\n';
    } else {
        os << "no finite step recorded\n";
    }
    save_checkpoint(dir / "last_finite.ckpt", params);
}

}  // namespace

OverfitResult overfit_run(const ModelConfig& model_cfg, const TrainConfig& cfg, const std::vector<TrainingPair>& pairs,
                          const std::optional<std::filesystem::path>& diag_dir) {
    if (pairs.empty()) throw std::invalid_argument("overfit_run: no training pairs");
    if (!(cfg.lr > 0.0)) throw std::invalid_argument("learning rate must be positive");
    OverfitResult result{RegFormer(model_cfg, cfg.seed), LossState(cfg.k_t, cfg.k_r), {}, {}, 0};
    result.loss_state.alpha = cfg.alpha;

    const ProjectionGrid grid = model_cfg.grid();
    std::vector<std::pair<FrameInput, FrameInput>> frames;
    for (const auto& p : pairs) frames.emplace_back(prepare_frame(p.source, grid), prepare_frame(p.target, grid));

    NamedParameters params = result.model.parameters();
    result.loss_state.collect(params);
    AdamConfig acfg;
    acfg.lr = cfg.lr;
    acfg.lr_floor = cfg.lr_floor;
    acfg.decay_steps = cfg.decay_steps == 0 ? std::max<std::size_t>(1, cfg.steps) : cfg.decay_steps;
    Adam adam(params, acfg);

    const double inv_batch = 1.0 / static_cast<double>(pairs.size());
    // Step `steps` only evaluates, so the history always ends with the final loss.
    for (std::size_t step = 0; step <= cfg.steps; ++step) {
        StepRecord rec;
        rec.step = step;
        rec.lr = adam.current_lr();
        rec.k_t = result.loss_state.k_t.item();
        rec.k_r = result.loss_state.k_r.item();
        adam.zero_grad();
        try {
            for (std::size_t b = 0; b < frames.size(); ++b) {
                const ForwardOutput fo = result.model.forward(frames[b].first, frames[b].second);
                std::vector<LayerLoss> terms;
                const Tensor loss = total_loss(fo, pairs[b].gt, result.loss_state, &terms);
                if (!std::isfinite(loss.item())) throw NumericalError("non-finite loss");
                rec.total += loss.item() * inv_batch;
                rec.l_trans.resize(terms.size(), 0.0);
                rec.l_rot.resize(terms.size(), 0.0);
                for (std::size_t i = 0; i < terms.size(); ++i) {
                    rec.l_trans[i] += terms[i].l_trans * inv_batch;
                    rec.l_rot[i] += terms[i].l_rot * inv_batch;
                }
                if (step < cfg.steps) loss.backward();
            }
        } catch (const NumericalError& e) {
            const StepRecord* last = result.history.empty() ? nullptr : &result.history.back();
            if (diag_dir) write_divergence(*diag_dir, last, params, e.what());
            throw TrainingDiverged("training diverged at step " + std::to_string(step) + ": " + e.what());
        }
        if (step % std::max<std::size_t>(1, cfg.report_every) == 0 || step == cfg.steps) result.history.push_back(rec);
        if (step < cfg.steps) adam.step(inv_batch);
    }
    result.skipped_steps = adam.skipped();
    result.final_errors = evaluate_pairs(result.model, pairs);
    return result;
}

void write_training_report(const std::filesystem::path& path, const OverfitResult& result) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << "# step total";
    if (!result.history.empty()) {
        for (std::size_t i = 0; i < result.history.front().l_trans.size(); ++i) {
            const std::size_t layer = result.history.front().l_trans.size() - 1 - i;
            os << " l_trans" << layer << " l_rot" << layer;
        }
    }
    os << " k_t k_r lr\n";
    os << std::setprecision(9);
    for (const auto& r : result.history) {
        os << r.step << ' ' << r.total;
        for (std::size_t i = 0; i < r.l_trans.size(); ++i) os << ' ' << r.l_trans[i] << ' ' << r.l_rot[i];
        os << ' ' << r.k_t << ' ' << r.k_r << ' ' << r.lr << '\n';
    }
    os << "# skipped_steps " << result.skipped_steps << '\n';
    for (const auto& e : result.final_errors) {
        os << "# final " << e.id;
        for (const auto& l : e.layers) os << " layer" << l.layer << " rre_deg " << l.rre_deg << " rte_m " << l.rte_m;
        os << '\n';
    }
    if (!os) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace regformer
