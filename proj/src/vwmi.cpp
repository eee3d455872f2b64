// vwmi.cpp - variance-weighted mutual information for affine alignment.

#include "smind/vwmi.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace smind {

namespace {

// Truncated box sums along one axis: out[n] = sum of in over [n - r, n + r] clipped to the line.
void box_sum_axis(std::vector<double> &data, const Index3 &dims, int axis, int64_t radius) {
    const int64_t n = dims[axis];
    const int64_t stride = (axis == 0) ? 1 : (axis == 1) ? dims[0] : dims[0] * dims[1];
    const int64_t o1 = (axis == 0) ? dims[1] : dims[0];
    const int64_t o2 = (axis == 2) ? dims[1] : dims[2];
    std::vector<double> prefix(static_cast<size_t>(n + 1));
    for (int64_t b = 0; b < o2; ++b) {
        for (int64_t a = 0; a < o1; ++a) {
            int64_t base = 0;
            if (axis == 0) base = dims[0] * (a + dims[1] * b);
            else if (axis == 1) base = a + dims[0] * dims[1] * b;
            else base = a + dims[0] * b;
            prefix[0] = 0.0;
            for (int64_t t = 0; t < n; ++t) prefix[static_cast<size_t>(t + 1)] = prefix[static_cast<size_t>(t)] + data[static_cast<size_t>(base + t * stride)];
            for (int64_t t = 0; t < n; ++t) {
                const int64_t lo = std::max<int64_t>(0, t - radius);
                const int64_t hi = std::min<int64_t>(n - 1, t + radius);
                data[static_cast<size_t>(base + t * stride)] = prefix[static_cast<size_t>(hi + 1)] - prefix[static_cast<size_t>(lo)];
            }
        }
    }
}

int64_t window_count(int64_t t, int64_t n, int64_t radius) {
    return std::min<int64_t>(n - 1, t + radius) - std::max<int64_t>(0, t - radius) + 1;
}

struct MiTerms {
    double loss = 0.0;
    std::vector<double> dloss_dp; // bins x bins, empty unless requested
};

MiTerms mutual_information_terms(const std::vector<double> &p, int bins, double eps, bool with_gradient) {
    std::vector<double> pf(static_cast<size_t>(bins), 0.0);
    std::vector<double> pm(static_cast<size_t>(bins), 0.0);
    for (int i = 0; i < bins; ++i)
        for (int j = 0; j < bins; ++j) {
            const double v = p[static_cast<size_t>(i * bins + j)];
            pf[static_cast<size_t>(i)] += v;
            pm[static_cast<size_t>(j)] += v;
        }
    MiTerms out;
    double mi = 0.0;
    for (int i = 0; i < bins; ++i)
        for (int j = 0; j < bins; ++j) {
            const double v = p[static_cast<size_t>(i * bins + j)];
            mi += v * std::log((v + eps) / (pf[static_cast<size_t>(i)] * pm[static_cast<size_t>(j)] + eps));
        }
    out.loss = 1.0 - mi;
    if (!with_gradient) return out;

    // dL/dP_ij including the dependence of both marginals on P.
    std::vector<double> a(static_cast<size_t>(bins), 0.0);
    std::vector<double> b(static_cast<size_t>(bins), 0.0);
    for (int i = 0; i < bins; ++i)
        for (int j = 0; j < bins; ++j) {
            const double v = p[static_cast<size_t>(i * bins + j)];
            const double den = pf[static_cast<size_t>(i)] * pm[static_cast<size_t>(j)] + eps;
            a[static_cast<size_t>(i)] += v * pm[static_cast<size_t>(j)] / den;
            b[static_cast<size_t>(j)] += v * pf[static_cast<size_t>(i)] / den;
        }
    out.dloss_dp.resize(p.size());
    for (int i = 0; i < bins; ++i)
        for (int j = 0; j < bins; ++j) {
            const double v = p[static_cast<size_t>(i * bins + j)];
            const double den = pf[static_cast<size_t>(i)] * pm[static_cast<size_t>(j)] + eps;
            out.dloss_dp[static_cast<size_t>(i * bins + j)] =
                -std::log((v + eps) / den) - v / (v + eps) + a[static_cast<size_t>(i)] + b[static_cast<size_t>(j)];
        }
    return out;
}

void check_same_dims(const Volume &a, const Volume &b, const char *what) {
    if (a.dims() != b.dims()) throw std::invalid_argument(std::string(what) + ": volume dims differ");
}

} // namespace

void HistogramConfig::validate() const {
    if (bins < 2) throw std::invalid_argument("HistogramConfig: bins must be >= 2");
    if (kernel_bandwidth < 0.0 || !std::isfinite(kernel_bandwidth))
        throw std::invalid_argument("HistogramConfig: kernel bandwidth must be positive (or 0 for one bin width)");
    if (6.0 * bandwidth() * bins + 2.0 > ParzenKernel::kMaxTaps)
        throw std::invalid_argument("HistogramConfig: kernel bandwidth too wide for the bin count");
    if (!(epsilon > 0.0)) throw std::invalid_argument("HistogramConfig: epsilon must be positive");
}

namespace {
constexpr double kFlatTolerance = 1e-12;
} // namespace

Volume local_variance(const Volume &vol, int window) {
    if (window < 3 || window % 2 == 0) {
        throw std::invalid_argument("local_variance: window must be odd and >= 3 (got " + std::to_string(window) + ")");
    }
    const int64_t r = window / 2;
    const auto src = vol.data();
    std::vector<double> s1(src.begin(), src.end());
    std::vector<double> s2(src.size());
    for (size_t n = 0; n < src.size(); ++n) s2[n] = src[n] * src[n];
    for (int a = 0; a < 3; ++a) {
        box_sum_axis(s1, vol.dims(), a, r);
        box_sum_axis(s2, vol.dims(), a, r);
    }
    Volume out(vol.dims(), vol.spacing());
    for (int64_t k = 0; k < vol.nz(); ++k) {
        const int64_t cz = window_count(k, vol.nz(), r);
        for (int64_t j = 0; j < vol.ny(); ++j) {
            const int64_t cy = window_count(j, vol.ny(), r);
            for (int64_t i = 0; i < vol.nx(); ++i) {
                const double count = static_cast<double>(window_count(i, vol.nx(), r) * cy * cz);
                const size_t n = vol.index(i, j, k);
                const double mean = s1[n] / count;
                const double second = s2[n] / count;
                // below the cancellation error of E[x^2] - E[x]^2 the window is flat
                const double var = second - mean * mean;
                out[n] = var > kFlatTolerance * second ? var : 0.0;
            }
        }
    }
    return out;
}

namespace {

WeightMap combine_variances(const Volume &fixed, const Volume &vf, const Volume &vm) {
    Volume m(fixed.dims(), fixed.spacing());
    double peak = 0.0;
    for (size_t n = 0; n < m.size(); ++n) {
        // sqrt(sigma_f * sigma_m) = (var_f * var_m)^(1/4)
        m[n] = std::sqrt(std::sqrt(vf[n] * vm[n]));
        peak = std::max(peak, m[n]);
    }
    if (peak > 0.0) {
        for (size_t n = 0; n < m.size(); ++n) m[n] /= peak;
    } else {
        std::fill(m.data().begin(), m.data().end(), 0.0);
    }
    return WeightMap{std::move(m)};
}

} // namespace

WeightMap weight_map(const Volume &fixed, const Volume &moving, int window) {
    check_same_dims(fixed, moving, "weight_map");
    return combine_variances(fixed, local_variance(fixed, window), local_variance(moving, window));
}

WeightMap warped_weight_map(const Volume &fixed, const Volume &moving, const AffineParams &p, int window) {
    check_same_dims(fixed, moving, "warped_weight_map");
    return combine_variances(fixed, local_variance(fixed, window), warp_affine(local_variance(moving, window), p));
}

WeightMap uniform_weight_map(const Volume &like) { return WeightMap{Volume(like.dims(), like.spacing(), 1.0)}; }

std::vector<double> JointHistogram::fixed_marginal() const {
    std::vector<double> out(static_cast<size_t>(bins), 0.0);
    for (int i = 0; i < bins; ++i)
        for (int j = 0; j < bins; ++j) out[static_cast<size_t>(i)] += (*this)(i, j);
    return out;
}

std::vector<double> JointHistogram::moving_marginal() const {
    std::vector<double> out(static_cast<size_t>(bins), 0.0);
    for (int i = 0; i < bins; ++i)
        for (int j = 0; j < bins; ++j) out[static_cast<size_t>(j)] += (*this)(i, j);
    return out;
}

ParzenKernel::ParzenKernel(const HistogramConfig &cfg) {
    cfg.validate();
    bins_ = cfg.bins;
    h_ = cfg.bandwidth();
    cutoff_ = 3.0 * h_;
    floor_ = std::exp(-4.5);
}

ParzenKernel::Taps ParzenKernel::evaluate(double v) const {
    Taps t;
    const double nb = static_cast<double>(bins_);
    const int lo = std::max(0, static_cast<int>(std::ceil((v - cutoff_) * nb - 0.5)));
    const int hi = std::min(bins_ - 1, static_cast<int>(std::floor((v + cutoff_) * nb - 0.5)));
    t.first = lo;
    t.count = std::max(0, hi - lo + 1);
    double sum = 0.0, dsum = 0.0;
    const double inv_h2 = 1.0 / (h_ * h_);
    for (int n = 0; n < t.count; ++n) {
        const double d = (static_cast<double>(lo + n) + 0.5) / nb - v;
        double g = 0.0, dg = 0.0;
        if (std::abs(d) < cutoff_) {
            const double e = std::exp(-0.5 * d * d * inv_h2);
            g = e - floor_;
            dg = e * d * inv_h2; // d/dv of exp(-(c - v)^2 / 2h^2)
        }
        t.w[static_cast<size_t>(n)] = g;
        t.dw[static_cast<size_t>(n)] = dg;
        sum += g;
        dsum += dg;
    }
    if (!(sum > 0.0)) {
        // Bandwidth narrower than the bin spacing: hard-assign to the nearest bin.
        const int nearest = std::clamp(static_cast<int>(std::floor(v * nb)), 0, bins_ - 1);
        t.first = nearest;
        t.count = 1;
        t.w[0] = 1.0;
        t.dw[0] = 0.0;
        return t;
    }
    for (int n = 0; n < t.count; ++n) {
        const double k = t.w[static_cast<size_t>(n)] / sum;
        t.dw[static_cast<size_t>(n)] = (t.dw[static_cast<size_t>(n)] - k * dsum) / sum;
        t.w[static_cast<size_t>(n)] = k;
    }
    return t;
}

JointHistogram weighted_joint_histogram(const Volume &fixed, const Volume &moving, const WeightMap &m,
                                        const HistogramConfig &cfg) {
    check_same_dims(fixed, moving, "weighted_joint_histogram");
    check_same_dims(fixed, m.values, "weighted_joint_histogram");
    const ParzenKernel kernel(cfg);
    JointHistogram h;
    h.bins = cfg.bins;
    h.p.assign(static_cast<size_t>(cfg.bins * cfg.bins), 0.0);
    double total = 0.0;
    for (size_t n = 0; n < fixed.size(); ++n) {
        const double w = m.values[n];
        if (w == 0.0) continue;
        total += w;
        const auto tf = kernel.evaluate(fixed[n]);
        const auto tm = kernel.evaluate(moving[n]);
        for (int a = 0; a < tf.count; ++a) {
            const double wf = w * tf.w[static_cast<size_t>(a)];
            double *row = &h.p[static_cast<size_t>((tf.first + a) * cfg.bins + tm.first)];
            for (int b = 0; b < tm.count; ++b) row[b] += wf * tm.w[static_cast<size_t>(b)];
        }
    }
    if (!(total > 0.0)) throw DegenerateWeightsError("weighted_joint_histogram: weight map is all zero");
    for (double &v : h.p) v /= total;
    return h;
}

double vwmi_loss(const Volume &fixed, const Volume &moving_warped, const WeightMap &m, const HistogramConfig &cfg) {
    const JointHistogram h = weighted_joint_histogram(fixed, moving_warped, m, cfg);
    return mutual_information_terms(h.p, h.bins, cfg.epsilon, false).loss;
}

VwmiObjective::VwmiObjective(const Volume &fixed, const Volume &moving, WeightMap m, const HistogramConfig &cfg,
                             double fov_taper)
    : fixed_(fixed), moving_(moving), weights_(std::move(m.values)), cfg_(cfg), kernel_(cfg), fov_taper_(fov_taper) {
    check_same_dims(fixed, moving, "VwmiObjective");
    check_same_dims(fixed, weights_, "VwmiObjective");
    if (!(fov_taper >= 0.0)) throw std::invalid_argument("VwmiObjective: fov_taper must be >= 0");
    double total = 0.0;
    for (size_t n = 0; n < weights_.size(); ++n) {
        if (weights_[n] == 0.0) continue;
        active_.push_back(n);
        total += weights_[n];
    }
    if (!(total > 0.0)) throw DegenerateWeightsError("VwmiObjective: weight map is all zero");
}

VwmiObjective::VwmiObjective(const Volume &fixed, const Volume &moving, TrackedWeights tracked,
                             const HistogramConfig &cfg, double fov_taper)
    : fixed_(fixed), moving_(moving), moving_variance_(local_variance(moving, tracked.window)), tracking_(true),
      cfg_(cfg), kernel_(cfg), fov_taper_(fov_taper) {
    check_same_dims(fixed, moving, "VwmiObjective");
    if (!(fov_taper >= 0.0)) throw std::invalid_argument("VwmiObjective: fov_taper must be >= 0");
    weights_ = local_variance(fixed, tracked.window);
    for (size_t n = 0; n < weights_.size(); ++n) {
        weights_[n] = std::sqrt(std::sqrt(weights_[n]));
        if (weights_[n] > 0.0) active_.push_back(n);
    }
    const bool moving_flat =
        std::all_of(moving_variance_.data().begin(), moving_variance_.data().end(), [](double v) { return v == 0.0; });
    if (active_.empty() || moving_flat) throw DegenerateWeightsError("VwmiObjective: a volume has zero variance everywhere");
}

namespace {

// C1 ramp from 0 on the grid boundary to 1 at `width` voxels inside, per axis.
struct Taper {
    double value = 1.0;
    Vec3 grad{0.0, 0.0, 0.0};
};

Taper fov_taper(const Vec3 &pos, const Index3 &dims, double width) {
    Taper t;
    if (width <= 0.0) return t;
    std::array<double, 3> f{}, df{};
    for (int a = 0; a < 3; ++a) {
        const double hi = static_cast<double>(dims[a] - 1);
        f[a] = 1.0;
        df[a] = 0.0;
        if (dims[a] == 1) continue;
        const double lo_dist = pos[a], hi_dist = hi - pos[a];
        const double d = std::min(lo_dist, hi_dist);
        const double sign = lo_dist <= hi_dist ? 1.0 : -1.0;
        if (d <= 0.0) {
            f[a] = 0.0;
        } else if (d < width) {
            const double u = d / width;
            f[a] = u * u * (3.0 - 2.0 * u);
            df[a] = sign * 6.0 * u * (1.0 - u) / width;
        }
    }
    t.value = f[0] * f[1] * f[2];
    t.grad = {df[0] * f[1] * f[2], f[0] * df[1] * f[2], f[0] * f[1] * df[2]};
    return t;
}

} // namespace

VwmiObjective::Result VwmiObjective::evaluate(const AffineParams &p, bool with_gradient) const {
    const Vec3 center = fixed_.center();
    const Vec3 &sp = fixed_.spacing();
    const Mat4 world = affine_matrix(p, center);
    const Mat4 a = voxel_sampling_matrix(world, sp);
    const int bins = cfg_.bins;
    const Index3 &dims = fixed_.dims();
    const Index3 &mdims = moving_.dims();

    // Per active voxel: sampled intensity, weight w, taper, and for the gradient
    // the spatial derivatives of intensity and (when tracking) of w.
    struct Sample {
        double value = 0.0;
        double weight = 0.0;
        Taper taper;
        Vec3 grad{0.0, 0.0, 0.0};
        Vec3 weight_grad{0.0, 0.0, 0.0};
    };
    const size_t count = active_.size();
    std::vector<Sample> samples(count);

    std::vector<double> hist(static_cast<size_t>(bins * bins), 0.0);
    double total = 0.0;
    for (size_t q = 0; q < count; ++q) {
        const size_t n = active_[q];
        const auto i = static_cast<int64_t>(n % static_cast<size_t>(dims[0]));
        const auto j = static_cast<int64_t>((n / static_cast<size_t>(dims[0])) % static_cast<size_t>(dims[1]));
        const auto k = static_cast<int64_t>(n / static_cast<size_t>(dims[0] * dims[1]));
        const Vec3 pos = smind::apply(a, Vec3{static_cast<double>(i), static_cast<double>(j), static_cast<double>(k)});
        Sample &s = samples[q];
        s.taper = fov_taper(pos, mdims, fov_taper_);
        s.weight = weights_[n];
        if (tracking_) {
            // w = (var_f var_m)^(1/4); dw/dvar_m = w / (4 var_m).
            if (with_gradient) {
                const auto vm = trilinear_sample_gradient(moving_variance_, pos);
                const double root = vm.value > 0.0 ? std::sqrt(std::sqrt(vm.value)) : 0.0;
                s.weight *= root;
                if (vm.value > 0.0)
                    for (int r = 0; r < 3; ++r) s.weight_grad[r] = s.weight / (4.0 * vm.value) * vm.grad[r];
            } else {
                const double vm = trilinear_sample(moving_variance_, pos);
                s.weight *= vm > 0.0 ? std::sqrt(std::sqrt(vm)) : 0.0;
            }
        }
        const double w = s.weight * s.taper.value;
        if (w == 0.0) continue;
        if (with_gradient) {
            const auto g = trilinear_sample_gradient(moving_, pos);
            s.value = g.value;
            s.grad = g.grad;
        } else {
            s.value = trilinear_sample(moving_, pos);
        }
        total += w;
        const auto tf = kernel_.evaluate(fixed_[n]);
        const auto tm = kernel_.evaluate(s.value);
        for (int x = 0; x < tf.count; ++x) {
            const double wf = w * tf.w[static_cast<size_t>(x)];
            double *row = &hist[static_cast<size_t>((tf.first + x) * bins + tm.first)];
            for (int y = 0; y < tm.count; ++y) row[y] += wf * tm.w[static_cast<size_t>(y)];
        }
    }
    Result out;
    if (!(total > 0.0)) {
        // No weighted overlap with the moving field of view: no information.
        out.loss = 1.0;
        return out;
    }
    const double inv_total = 1.0 / total;
    for (double &v : hist) v *= inv_total;

    const MiTerms terms = mutual_information_terms(hist, bins, cfg_.epsilon, with_gradient);
    out.loss = terms.loss;
    if (!with_gradient) return out;

    // With a(x) = w(x) taper(x), S = sum a and P = sum a K_f K_m / S:
    //   dL/dv(x) = a(x)/S * sum G K_f dK_m
    //   dL/da(x) = (sum G K_f K_m - sum G P) / S
    // and a depends on the sampling position through the taper and (tracking) w.
    // Accumulate Q = sum_x (spatial derivative of L at x) (x) [i, j, k, 1], then
    // contract Q with d(sampling matrix)/d theta.
    const auto &g = terms.dloss_dp;
    double gbar = 0.0;
    for (size_t b = 0; b < hist.size(); ++b) gbar += g[b] * hist[b];

    std::array<std::array<double, 4>, 3> qm{};
    for (size_t q = 0; q < count; ++q) {
        const Sample &s = samples[q];
        const double a_x = s.weight * s.taper.value;
        Vec3 da_dpos;
        for (int r = 0; r < 3; ++r) da_dpos[r] = s.weight * s.taper.grad[r] + s.taper.value * s.weight_grad[r];
        const bool position_dependent = da_dpos[0] != 0.0 || da_dpos[1] != 0.0 || da_dpos[2] != 0.0;
        if (a_x == 0.0 && !position_dependent) continue;
        const size_t n = active_[q];
        const auto tf = kernel_.evaluate(fixed_[n]);
        const auto tm = kernel_.evaluate(s.value);
        double dv = 0.0, gi = 0.0;
        for (int x = 0; x < tf.count; ++x) {
            const double *grow = &g[static_cast<size_t>((tf.first + x) * bins + tm.first)];
            double sd = 0.0, s0 = 0.0;
            for (int y = 0; y < tm.count; ++y) {
                sd += grow[y] * tm.dw[static_cast<size_t>(y)];
                s0 += grow[y] * tm.w[static_cast<size_t>(y)];
            }
            dv += tf.w[static_cast<size_t>(x)] * sd;
            gi += tf.w[static_cast<size_t>(x)] * s0;
        }
        dv *= a_x * inv_total;
        const double da = (gi - gbar) * inv_total;
        const auto i = static_cast<double>(n % static_cast<size_t>(dims[0]));
        const auto j = static_cast<double>((n / static_cast<size_t>(dims[0])) % static_cast<size_t>(dims[1]));
        const auto k = static_cast<double>(n / static_cast<size_t>(dims[0] * dims[1]));
        const double xh[4] = {i, j, k, 1.0};
        for (int r = 0; r < 3; ++r) {
            const double gr = dv * s.grad[static_cast<size_t>(r)] + da * da_dpos[static_cast<size_t>(r)];
            if (gr == 0.0) continue;
            for (int c = 0; c < 4; ++c) qm[static_cast<size_t>(r)][static_cast<size_t>(c)] += gr * xh[c];
        }
    }

    const Mat4 inv = invert(world);
    for (int d = 0; d < AffineParams::kDof; ++d) {
        // d(M^-1) = -M^-1 dM M^-1, then conjugate by the spacing diagonal.
        const Mat4 dinv = multiply(multiply(inv, affine_matrix_derivative(p, center, d)), inv);
        double acc = 0.0;
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 3; ++c) acc -= dinv[r][c] * sp[c] / sp[r] * qm[static_cast<size_t>(r)][static_cast<size_t>(c)];
            acc -= dinv[r][3] / sp[r] * qm[static_cast<size_t>(r)][3];
        }
        out.grad[static_cast<size_t>(d)] = acc;
    }
    return out;
}

std::array<double, AffineParams::kDof> vwmi_gradient(const Volume &fixed, const Volume &moving, const WeightMap &m,
                                                     const AffineParams &p, const HistogramConfig &cfg) {
    const VwmiObjective objective(fixed, moving, m, cfg);
    return objective.evaluate(p, true).grad;
}

} // namespace smind
