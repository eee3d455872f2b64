// smind_loss.cpp - search-based MIND similarity, diffusion regularization and the
// combined deformable objective.

#include "smind/smind_loss.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace smind {

namespace {

void check_feature_dims(const MindFeatures &a, const MindFeatures &b) {
    if (a.dims != b.dims || a.values.size() != b.values.size()) {
        throw std::invalid_argument("S-MIND: feature volumes have different dims");
    }
}

double channel_distance(const MindFeatures &ff, size_t x, const MindFeatures &fw, size_t y) {
    const double *a = &ff.values[x * kMindChannels];
    const double *b = &fw.values[y * kMindChannels];
    double s = 0.0;
    for (int c = 0; c < kMindChannels; ++c) {
        const double d = a[c] - b[c];
        s += d * d;
    }
    return std::sqrt(s);
}

int64_t stride_of(const Index3 &d, int axis) { return axis == 0 ? 1 : axis == 1 ? d[0] : d[0] * d[1]; }

double mean_of(const Volume &v) {
    double s = 0.0;
    for (double x : v.data()) s += x;
    return s / static_cast<double>(v.size());
}

} // namespace

void SMindConfig::validate() const {
    if (radius < 0) throw std::invalid_argument("SMindConfig: radius must be >= 0");
    if (!(tau > 0.0)) throw std::invalid_argument("SMindConfig: tau must be positive");
    if (!(sigma > 0.0)) throw std::invalid_argument("SMindConfig: sigma must be positive");
}

void DeformLossConfig::validate() const {
    smind.validate();
    if (!(lambda >= 0.0)) throw std::invalid_argument("DeformLossConfig: lambda must be >= 0");
    if (levels < 1) throw std::invalid_argument("DeformLossConfig: levels must be >= 1");
    if (!(similarity_weight >= 0.0)) throw std::invalid_argument("DeformLossConfig: similarity weight must be >= 0");
}

Volume shift_distance(const MindFeatures &ff, const MindFeatures &fw, Axis axis, int s) {
    check_feature_dims(ff, fw);
    const Index3 &d = ff.dims;
    const int a = static_cast<int>(axis);
    const int64_t stride = stride_of(d, a);
    Volume out(d, Vec3{1.0, 1.0, 1.0});
    for (int64_t k = 0; k < d[2]; ++k)
        for (int64_t j = 0; j < d[1]; ++j)
            for (int64_t i = 0; i < d[0]; ++i) {
                const Index3 idx{i, j, k};
                const size_t x = out.index(i, j, k);
                const int64_t t = idx[a] + s;
                const bool inside = t >= 0 && t < d[a];
                const size_t y = inside ? static_cast<size_t>(static_cast<int64_t>(x) + s * stride) : x;
                out[x] = channel_distance(ff, x, fw, y);
            }
    return out;
}

std::vector<Volume> softmin_weights(const std::vector<Volume> &distances, const SMindConfig &cfg) {
    cfg.validate();
    if (distances.size() != static_cast<size_t>(2 * cfg.radius + 1)) {
        throw std::invalid_argument("softmin_weights: expected " + std::to_string(2 * cfg.radius + 1) +
                                    " distance volumes, got " + std::to_string(distances.size()));
    }
    const size_t ns = distances.size();
    std::vector<Volume> weights;
    weights.reserve(ns);
    for (const auto &dv : distances) weights.emplace_back(dv.dims(), dv.spacing());
    const double bias = 1.0 / (2.0 * cfg.sigma * cfg.sigma);
    std::vector<double> logit(ns);
    for (size_t n = 0; n < distances[0].size(); ++n) {
        double peak = -std::numeric_limits<double>::infinity();
        for (size_t q = 0; q < ns; ++q) {
            const double s = static_cast<double>(static_cast<int>(q) - cfg.radius);
            logit[q] = -distances[q][n] / cfg.tau - s * s * bias;
            peak = std::max(peak, logit[q]);
        }
        double z = 0.0;
        for (size_t q = 0; q < ns; ++q) {
            logit[q] = std::exp(logit[q] - peak);
            z += logit[q];
        }
        for (size_t q = 0; q < ns; ++q) weights[q][n] = logit[q] / z;
    }
    return weights;
}

Volume expected_cost(const std::vector<Volume> &distances, const std::vector<Volume> &weights) {
    if (distances.size() != weights.size() || distances.empty()) {
        throw std::invalid_argument("expected_cost: distance and weight shift sets differ");
    }
    Volume out(distances[0].dims(), distances[0].spacing());
    for (size_t q = 0; q < distances.size(); ++q)
        for (size_t n = 0; n < out.size(); ++n) out[n] += weights[q][n] * distances[q][n];
    return out;
}

double smind_loss(const Volume &fixed, const Volume &moving, const DeformationField &field, const SMindConfig &cfg) {
    cfg.validate();
    if (fixed.dims() != moving.dims()) throw std::invalid_argument("smind_loss: fixed and moving dims differ");
    const MindFeatures ff = mind_features(fixed);
    const MindFeatures fw = mind_features(warp_dense(moving, field));
    double total = 0.0;
    for (int a = 0; a < 3; ++a) {
        std::vector<Volume> distances;
        for (int s = -cfg.radius; s <= cfg.radius; ++s) distances.push_back(shift_distance(ff, fw, static_cast<Axis>(a), s));
        const auto weights = softmin_weights(distances, cfg);
        total += mean_of(expected_cost(distances, weights));
    }
    return total / 3.0;
}

double smind_loss_fused(const MindFeatures &ff, const MindFeatures &fw, const SMindConfig &cfg,
                        std::vector<double> *grad_warped_features) {
    cfg.validate();
    check_feature_dims(ff, fw);
    const Index3 &d = ff.dims;
    const int r = cfg.radius;
    const size_t ns = static_cast<size_t>(2 * r + 1);
    const double bias = 1.0 / (2.0 * cfg.sigma * cfg.sigma);
    const size_t count = ff.voxels();
    const double scale = 1.0 / (3.0 * static_cast<double>(count));

    if (grad_warped_features) grad_warped_features->assign(fw.values.size(), 0.0);

    std::vector<double> dist(ns), prob(ns);
    std::vector<size_t> target(ns);
    double total = 0.0;
    for (int a = 0; a < 3; ++a) {
        const int64_t stride = stride_of(d, a);
        double axis_sum = 0.0;
        for (int64_t k = 0; k < d[2]; ++k)
            for (int64_t j = 0; j < d[1]; ++j)
                for (int64_t i = 0; i < d[0]; ++i) {
                    const Index3 idx{i, j, k};
                    const auto x = static_cast<size_t>(i + d[0] * (j + d[1] * k));
                    double peak = -std::numeric_limits<double>::infinity();
                    for (size_t q = 0; q < ns; ++q) {
                        const int s = static_cast<int>(q) - r;
                        const int64_t t = idx[a] + s;
                        const bool inside = t >= 0 && t < d[a];
                        target[q] = inside ? static_cast<size_t>(static_cast<int64_t>(x) + s * stride) : x;
                        dist[q] = channel_distance(ff, x, fw, target[q]);
                        prob[q] = -dist[q] / cfg.tau - static_cast<double>(s * s) * bias;
                        peak = std::max(peak, prob[q]);
                    }
                    double z = 0.0;
                    for (size_t q = 0; q < ns; ++q) {
                        prob[q] = std::exp(prob[q] - peak);
                        z += prob[q];
                    }
                    double cost = 0.0;
                    for (size_t q = 0; q < ns; ++q) {
                        prob[q] /= z;
                        cost += prob[q] * dist[q];
                    }
                    axis_sum += cost;
                    if (!grad_warped_features) continue;

                    // d cost / d d_s = p_s (1 - (d_s - cost) / tau)
                    for (size_t q = 0; q < ns; ++q) {
                        if (!(dist[q] > 0.0)) continue;
                        const double g = scale * prob[q] * (1.0 - (dist[q] - cost) / cfg.tau) / dist[q];
                        if (g == 0.0) continue;
                        const double *fa = &ff.values[x * kMindChannels];
                        const double *fb = &fw.values[target[q] * kMindChannels];
                        double *out = &(*grad_warped_features)[target[q] * kMindChannels];
                        for (int c = 0; c < kMindChannels; ++c) out[c] -= g * (fa[c] - fb[c]);
                    }
                }
        total += axis_sum / static_cast<double>(count);
    }
    return total / 3.0;
}

double diffusion_reg(const MultiResField &f) {
    if (f.residuals.empty()) throw std::invalid_argument("diffusion_reg: no residual fields");
    double total = 0.0;
    for (const auto &field : f.residuals) {
        const Index3 &d = field.dims();
        double s = 0.0;
        for (int64_t k = 0; k < d[2]; ++k)
            for (int64_t j = 0; j < d[1]; ++j)
                for (int64_t i = 0; i < d[0]; ++i)
                    for (int c = 0; c < 3; ++c) {
                        const double u = field.at(i, j, k, c);
                        if (i + 1 < d[0]) s += (field.at(i + 1, j, k, c) - u) * (field.at(i + 1, j, k, c) - u);
                        if (j + 1 < d[1]) s += (field.at(i, j + 1, k, c) - u) * (field.at(i, j + 1, k, c) - u);
                        if (k + 1 < d[2]) s += (field.at(i, j, k + 1, c) - u) * (field.at(i, j, k + 1, c) - u);
                    }
        total += s / (3.0 * static_cast<double>(field.voxels()));
    }
    return total / static_cast<double>(f.residuals.size());
}

MultiResField diffusion_reg_gradient(const MultiResField &f) {
    if (f.residuals.empty()) throw std::invalid_argument("diffusion_reg_gradient: no residual fields");
    MultiResField g;
    const double inv_levels = 1.0 / static_cast<double>(f.residuals.size());
    for (const auto &field : f.residuals) {
        const Index3 &d = field.dims();
        DeformationField out(d, field.spacing());
        const double w = 2.0 * inv_levels / (3.0 * static_cast<double>(field.voxels()));
        for (int64_t k = 0; k < d[2]; ++k)
            for (int64_t j = 0; j < d[1]; ++j)
                for (int64_t i = 0; i < d[0]; ++i)
                    for (int c = 0; c < 3; ++c) {
                        const double u = field.at(i, j, k, c);
                        double acc = 0.0;
                        if (i > 0) acc += u - field.at(i - 1, j, k, c);
                        if (i + 1 < d[0]) acc -= field.at(i + 1, j, k, c) - u;
                        if (j > 0) acc += u - field.at(i, j - 1, k, c);
                        if (j + 1 < d[1]) acc -= field.at(i, j + 1, k, c) - u;
                        if (k > 0) acc += u - field.at(i, j, k - 1, c);
                        if (k + 1 < d[2]) acc -= field.at(i, j, k + 1, c) - u;
                        out.at(i, j, k, c) = w * acc;
                    }
        g.residuals.push_back(std::move(out));
    }
    return g;
}

DeformObjective::DeformObjective(const Volume &fixed, const Volume &moving, const DeformLossConfig &cfg)
    : fixed_(fixed), moving_(moving), cfg_(cfg) {
    cfg_.validate();
    if (fixed.dims() != moving.dims()) throw std::invalid_argument("DeformObjective: fixed and moving dims differ");
    fixed_features_ = mind_features(fixed_);
}

DeformObjective::Result DeformObjective::evaluate(const MultiResField &f, bool with_gradient) const {
    const DeformationField total = compose_multires(f);
    if (total.dims() != fixed_.dims()) throw std::invalid_argument("DeformObjective: finest field dims differ from the volumes");

    Result out;
    out.regularization = diffusion_reg(f);
    if (cfg_.similarity_weight == 0.0 && !with_gradient) {
        out.loss = cfg_.lambda * out.regularization;
        return out;
    }

    // Positions are clamped to the moving grid: a zero-filled outside would give
    // every displacement near the border an artificial edge to chase.
    const Index3 &d = total.dims();
    std::vector<Vec3> positions(fixed_.size());
    std::vector<std::array<bool, 3>> clamped(fixed_.size());
    Volume warped(d, fixed_.spacing());
    for (int64_t k = 0; k < d[2]; ++k)
        for (int64_t j = 0; j < d[1]; ++j)
            for (int64_t i = 0; i < d[0]; ++i) {
                const size_t n = fixed_.index(i, j, k);
                const double idx[3] = {static_cast<double>(i), static_cast<double>(j), static_cast<double>(k)};
                for (int c = 0; c < 3; ++c) {
                    const double hi = static_cast<double>(d[c] - 1);
                    const double q = idx[c] + total.at(i, j, k, c);
                    positions[n][c] = std::clamp(q, 0.0, hi);
                    clamped[n][static_cast<size_t>(c)] = q < 0.0 || q > hi;
                }
                warped[n] = trilinear_sample(moving_, positions[n]);
            }
    MindCache cache;
    const MindFeatures fw = mind_features(warped, cache);
    std::vector<double> gfw;
    out.similarity = smind_loss_fused(fixed_features_, fw, cfg_.smind, with_gradient ? &gfw : nullptr);
    out.loss = cfg_.similarity_weight * out.similarity + cfg_.lambda * out.regularization;
    if (!with_gradient) return out;

    // Back through MIND, then through the trilinear sampler into the finest field.
    const std::vector<double> gw = mind_features_backward(warped, fw, cache, gfw);
    DeformationField gtotal(total.dims(), total.spacing());
    for (int64_t k = 0; k < d[2]; ++k)
        for (int64_t j = 0; j < d[1]; ++j)
            for (int64_t i = 0; i < d[0]; ++i) {
                const size_t n = fixed_.index(i, j, k);
                const double g = cfg_.similarity_weight * gw[n];
                if (g == 0.0) continue;
                const auto s = trilinear_sample_gradient(moving_, positions[n]);
                for (int c = 0; c < 3; ++c)
                    if (!clamped[n][static_cast<size_t>(c)]) gtotal.at(i, j, k, c) = g * s.grad[static_cast<size_t>(c)];
            }

    const MultiResField greg = diffusion_reg_gradient(f);
    for (size_t l = 0; l < f.residuals.size(); ++l) {
        const auto &res = f.residuals[l];
        DeformationField gl = upsample_field_adjoint(gtotal, res.dims(), res.spacing());
        auto dst = gl.data();
        auto reg = greg.residuals[l].data();
        for (size_t n = 0; n < dst.size(); ++n) dst[n] += cfg_.lambda * reg[n];
        out.grad.residuals.push_back(std::move(gl));
    }
    return out;
}

double deform_loss(const Volume &fixed, const Volume &moving, const MultiResField &f, const DeformLossConfig &cfg) {
    return DeformObjective(fixed, moving, cfg).evaluate(f, false).loss;
}

MultiResField deform_gradient(const Volume &fixed, const Volume &moving, const MultiResField &f,
                              const DeformLossConfig &cfg) {
    return DeformObjective(fixed, moving, cfg).evaluate(f, true).grad;
}

} // namespace smind
