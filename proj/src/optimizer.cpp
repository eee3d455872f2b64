// optimizer.cpp - Adam, early stopping, gradient checking and the two registration stages.

#include "smind/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <stdexcept>
#include <string>

namespace smind {

namespace {

constexpr double kMinScale = 0.05;

// Optimizer units: internal parameter k = physical value k / unit[k], so a single
// Adam learning rate moves each component by lr * unit[k] per step at most.
struct ParamScaling {
    std::array<double, 9> unit{1, 1, 1, 1, 1, 1, 1, 1, 1};

    std::array<double, 9> to_internal(const AffineParams &p) const {
        auto v = p.to_array();
        for (size_t k = 0; k < 9; ++k) v[k] /= unit[k];
        return v;
    }
    AffineParams to_params(const std::array<double, 9> &v) const {
        auto w = v;
        for (size_t k = 0; k < 9; ++k) w[k] *= unit[k];
        return AffineParams::from_array(w);
    }
    void grad_to_internal(std::array<double, 9> &g) const {
        for (size_t k = 0; k < 9; ++k) g[k] *= unit[k];
    }
};

// One coarse phase's objective; uniform weights when the variance map is degenerate.
VwmiObjective make_phase_objective(const Volume &fixed, const Volume &moving, const AffineParams &start,
                                   const CoarseConfig &cfg, bool &fallback) {
    try {
        if (cfg.weight_update == WeightUpdate::tracked)
            return VwmiObjective(fixed, moving, TrackedWeights{cfg.window}, cfg.histogram);
        return VwmiObjective(fixed, moving, warped_weight_map(fixed, moving, start, cfg.window), cfg.histogram);
    } catch (const DegenerateWeightsError &) {
        if (!fallback) std::cerr << "warning: variance weight map is all zero; falling back to uniform weights\n";
        fallback = true;
        return VwmiObjective(fixed, moving, uniform_weight_map(fixed), cfg.histogram);
    }
}

void require_finite(const Volume &v, const char *what) {
    for (size_t n = 0; n < v.size(); ++n)
        if (!std::isfinite(v[n])) throw NumericalError(std::string(what) + ": non-finite intensity at voxel " + std::to_string(n));
}

struct PhaseOutcome {
    std::array<double, 9> best;
    double best_loss = 0.0;
    int iterations = 0;
};

PhaseOutcome run_affine_phase(const VwmiObjective &objective, const ParamScaling &scaling,
                              const std::array<double, 9> &start, const std::array<bool, 9> &active,
                              const StageSchedule &schedule, const std::string &stage, LossTrace *trace) {
    std::array<double, 9> theta = start;
    AdamState adam(9, schedule.lr);
    EarlyStopper stopper(schedule);
    PhaseOutcome out{theta, 0.0, 0};
    bool have_best = false;
    for (int it = 0; it < schedule.max_iters; ++it) {
        auto r = objective.evaluate(scaling.to_params(theta));
        if (!std::isfinite(r.loss)) throw NumericalError("coarse registration: non-finite VWMI loss");
        if (trace) trace->push_back({stage, it, r.loss});
        if (!have_best || r.loss < out.best_loss) {
            out.best = theta;
            out.best_loss = r.loss;
            have_best = true;
        }
        out.iterations = it + 1;
        if (stopper.update(r.loss)) break;

        scaling.grad_to_internal(r.grad);
        for (size_t k = 0; k < 9; ++k)
            if (!active[k]) r.grad[k] = 0.0;
        adam_step(adam, theta, r.grad);
        for (size_t k = 6; k < 9; ++k) theta[k] = std::max(theta[k], kMinScale / scaling.unit[k]);
    }
    return out;
}

} // namespace

void adam_step(AdamState &state, std::span<double> params, std::span<const double> grad) {
    if (params.size() != grad.size()) {
        throw std::invalid_argument("adam_step: params has " + std::to_string(params.size()) + " entries, grad has " +
                                    std::to_string(grad.size()));
    }
    if (state.m.empty() && state.v.empty()) {
        state.m.assign(params.size(), 0.0);
        state.v.assign(params.size(), 0.0);
    }
    if (state.m.size() != params.size() || state.v.size() != params.size()) {
        throw std::invalid_argument("adam_step: state size does not match params");
    }
    ++state.step;
    const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (size_t k = 0; k < params.size(); ++k) {
        state.m[k] = state.beta1 * state.m[k] + (1.0 - state.beta1) * grad[k];
        state.v[k] = state.beta2 * state.v[k] + (1.0 - state.beta2) * grad[k] * grad[k];
        const double mhat = state.m[k] / c1;
        const double vhat = state.v[k] / c2;
        params[k] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
}

void StageSchedule::validate() const {
    if (!(lr > 0.0)) throw std::invalid_argument("StageSchedule: lr must be positive");
    if (max_iters < 1) throw std::invalid_argument("StageSchedule: max_iters must be >= 1");
    if (patience < 1) throw std::invalid_argument("StageSchedule: patience must be >= 1");
    if (!(min_delta >= 0.0)) throw std::invalid_argument("StageSchedule: min_delta must be >= 0");
}

bool EarlyStopper::update(double loss) {
    improved_ = !has_best_ || loss < best_ - min_delta_;
    if (improved_) {
        best_ = loss;
        has_best_ = true;
        stale_ = 0;
        return false;
    }
    return ++stale_ >= patience_;
}

GradientCheckResult gradient_check(const std::function<double(std::span<const double>)> &loss,
                                   std::span<const double> point, std::span<const double> analytic, double h,
                                   double abs_floor) {
    if (!(h > 0.0)) throw std::invalid_argument("gradient_check: step must be positive");
    if (point.size() != analytic.size()) throw std::invalid_argument("gradient_check: gradient size mismatch");
    GradientCheckResult out;
    std::vector<double> x(point.begin(), point.end());
    for (size_t k = 0; k < x.size(); ++k) {
        const double x0 = x[k];
        x[k] = x0 + h;
        const double fp = loss(x);
        x[k] = x0 - h;
        const double fm = loss(x);
        x[k] = x0;
        const double numeric = (fp - fm) / (2.0 * h);
        const double denom = std::max({std::abs(analytic[k]), std::abs(numeric), abs_floor});
        const double rel = std::abs(analytic[k] - numeric) / denom;
        out.numeric.push_back(numeric);
        out.relative_error.push_back(rel);
        out.max_relative_error = std::max(out.max_relative_error, rel);
        out.mean_relative_error += rel;
    }
    if (!x.empty()) out.mean_relative_error /= static_cast<double>(x.size());
    return out;
}

CoarseResult coarse_register(const Volume &fixed, const Volume &moving, const CoarseConfig &cfg, LossTrace *trace) {
    if (fixed.dims() != moving.dims()) throw std::invalid_argument("coarse_register: fixed and moving dims differ");
    require_finite(fixed, "coarse_register: fixed");
    require_finite(moving, "coarse_register: moving");
    cfg.histogram.validate();
    cfg.schedule.validate();

    // Rigid phase: translations in units of the half field of view, so the default
    // budget can travel the whole volume. Nine-DOF refinement: translations in voxels,
    // rotations and scales in units of 0.1, so one step displaces the volume edge by
    // a comparable amount for every component.
    ParamScaling coarse_units, fine_units;
    constexpr double rot_unit = 0.1;
    constexpr double scale_unit = 0.1;
    for (size_t a = 0; a < 3; ++a) {
        coarse_units.unit[3 + a] = 0.5 * static_cast<double>(fixed.dims()[a]) * fixed.spacing()[a];
        fine_units.unit[a] = rot_unit;
        fine_units.unit[3 + a] = fixed.spacing()[a];
        fine_units.unit[6 + a] = scale_unit;
    }

    CoarseResult result;
    const std::array<double, 9> identity = coarse_units.to_internal(AffineParams{});

    const Volume fixed_s = gaussian_smooth(fixed, cfg.smoothing_sigma);
    const Volume moving_s = gaussian_smooth(moving, cfg.smoothing_sigma);

    // Rigid phase on the half-resolution pair.
    const Volume fixed_half = downsample2(fixed_s);
    const Volume moving_half = downsample2(moving_s);
    const VwmiObjective rigid =
        make_phase_objective(fixed_half, moving_half, AffineParams{}, cfg, result.uniform_weight_fallback);
    const std::array<bool, 9> rigid_mask{true, true, true, true, true, true, false, false, false};
    const PhaseOutcome a = run_affine_phase(rigid, coarse_units, identity, rigid_mask, cfg.schedule, "rigid", trace);
    result.rigid_iterations = a.iterations;
    result.rigid_params = coarse_units.to_params(a.best);

    // Full nine parameters at the original resolution.
    const VwmiObjective affine =
        make_phase_objective(fixed_s, moving_s, result.rigid_params, cfg, result.uniform_weight_fallback);
    std::array<bool, 9> all{};
    all.fill(true);
    const PhaseOutcome b = run_affine_phase(affine, fine_units, fine_units.to_internal(result.rigid_params), all,
                                            cfg.schedule, "affine", trace);
    result.affine_iterations = b.iterations;
    result.params = fine_units.to_params(b.best);
    result.loss = b.best_loss;
    return result;
}

DeformableResult deformable_register(const Volume &fixed, const Volume &moving_coarse, const DeformableConfig &cfg,
                                     LossTrace *trace) {
    cfg.schedule.validate();
    require_finite(fixed, "deformable_register: fixed");
    require_finite(moving_coarse, "deformable_register: moving");
    if (!(cfg.displacement_scale > 0.0)) throw std::invalid_argument("deformable_register: displacement scale must be positive");
    if (!(cfg.smoothing_sigma >= 0.0)) throw std::invalid_argument("deformable_register: smoothing must be >= 0");
    const DeformObjective objective(gaussian_smooth(fixed, cfg.smoothing_sigma),
                                    gaussian_smooth(moving_coarse, cfg.smoothing_sigma), cfg.loss);

    MultiResField field = make_multires(fixed, cfg.loss.levels);
    size_t total = 0;
    for (const auto &r : field.residuals) total += r.data().size();

    // Optimizer state lives in parameter units: displacement = scale * parameter.
    std::vector<double> theta(total, 0.0);
    std::vector<double> grad(total, 0.0);
    AdamState adam(total, cfg.schedule.lr);
    EarlyStopper stopper(cfg.schedule);

    DeformableResult out;
    out.field = field;
    bool have_best = false;
    for (int it = 0; it < cfg.schedule.max_iters; ++it) {
        size_t off = 0;
        for (auto &r : field.residuals) {
            auto d = r.data();
            for (size_t n = 0; n < d.size(); ++n) d[n] = cfg.displacement_scale * theta[off + n];
            off += d.size();
        }
        auto r = objective.evaluate(field, true);
        if (!std::isfinite(r.loss)) throw NumericalError("deformable registration: non-finite loss");
        if (trace) trace->push_back({"deformable", it, r.loss});
        if (!have_best || r.loss < out.loss) {
            out.field = field;
            out.loss = r.loss;
            have_best = true;
        }
        out.iterations = it + 1;
        if (stopper.update(r.loss)) break;

        off = 0;
        for (const auto &g : r.grad.residuals) {
            auto d = g.data();
            for (size_t n = 0; n < d.size(); ++n) grad[off + n] = cfg.displacement_scale * d[n];
            off += d.size();
        }
        adam_step(adam, theta, grad);
    }
    return out;
}

} // namespace smind
