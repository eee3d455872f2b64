// mind.cpp - modality independent neighbourhood descriptor over the 6-neighbourhood.

#include "smind/mind.hpp"

#include <algorithm>
#include <cmath>

namespace smind {

namespace {

// 1D patch weights for offsets -1, 0, +1 with sigma 0.5, normalized to unit sum.
struct PatchKernel {
    double side;
    double mid;
};

PatchKernel patch_kernel() {
    const double e = std::exp(-1.0 / (2.0 * 0.25));
    const double norm = 1.0 + 2.0 * e;
    return {e / norm, 1.0 / norm};
}

int64_t clamp_index(int64_t v, int64_t n) { return std::clamp<int64_t>(v, 0, n - 1); }

int64_t axis_stride(const Index3 &d, int axis) { return axis == 0 ? 1 : axis == 1 ? d[0] : d[0] * d[1]; }

// Three-tap clamped convolution along one axis.
std::vector<double> convolve_axis(const std::vector<double> &src, const Index3 &d, int axis) {
    const PatchKernel pk = patch_kernel();
    const int64_t stride = axis_stride(d, axis);
    const int64_t n = d[axis];
    std::vector<double> dst(src.size());
    for (int64_t k = 0; k < d[2]; ++k)
        for (int64_t j = 0; j < d[1]; ++j)
            for (int64_t i = 0; i < d[0]; ++i) {
                const int64_t idx = i + d[0] * (j + d[1] * k);
                const int64_t t = (axis == 0) ? i : (axis == 1) ? j : k;
                const int64_t lo = idx + (clamp_index(t - 1, n) - t) * stride;
                const int64_t hi = idx + (clamp_index(t + 1, n) - t) * stride;
                dst[static_cast<size_t>(idx)] = pk.side * (src[static_cast<size_t>(lo)] + src[static_cast<size_t>(hi)]) +
                                                pk.mid * src[static_cast<size_t>(idx)];
            }
    return dst;
}

std::vector<double> convolve_axis_adjoint(const std::vector<double> &g, const Index3 &d, int axis) {
    const PatchKernel pk = patch_kernel();
    const int64_t stride = axis_stride(d, axis);
    const int64_t n = d[axis];
    std::vector<double> out(g.size(), 0.0);
    for (int64_t k = 0; k < d[2]; ++k)
        for (int64_t j = 0; j < d[1]; ++j)
            for (int64_t i = 0; i < d[0]; ++i) {
                const int64_t idx = i + d[0] * (j + d[1] * k);
                const int64_t t = (axis == 0) ? i : (axis == 1) ? j : k;
                const int64_t lo = idx + (clamp_index(t - 1, n) - t) * stride;
                const int64_t hi = idx + (clamp_index(t + 1, n) - t) * stride;
                const double v = g[static_cast<size_t>(idx)];
                out[static_cast<size_t>(lo)] += pk.side * v;
                out[static_cast<size_t>(hi)] += pk.side * v;
                out[static_cast<size_t>(idx)] += pk.mid * v;
            }
    return out;
}

// Flat index of the clamped neighbour x + offset.
int64_t neighbour(const Index3 &d, int64_t i, int64_t j, int64_t k, const std::array<int, 3> &o) {
    return clamp_index(i + o[0], d[0]) + d[0] * (clamp_index(j + o[1], d[1]) + d[1] * clamp_index(k + o[2], d[2]));
}

} // namespace

MindFeatures mind_features(const Volume &vol) {
    MindCache cache;
    return mind_features(vol, cache);
}

MindFeatures mind_features(const Volume &vol, MindCache &cache) {
    const Index3 &d = vol.dims();
    const size_t count = vol.size();
    const auto w = vol.data();

    for (int c = 0; c < kMindChannels; ++c) {
        std::vector<double> sq(count);
        for (int64_t k = 0; k < d[2]; ++k)
            for (int64_t j = 0; j < d[1]; ++j)
                for (int64_t i = 0; i < d[0]; ++i) {
                    const size_t n = vol.index(i, j, k);
                    const double diff = w[n] - w[static_cast<size_t>(neighbour(d, i, j, k, kMindOffsets[static_cast<size_t>(c)]))];
                    sq[n] = diff * diff;
                }
        for (int a = 0; a < 3; ++a) sq = convolve_axis(sq, d, a);
        cache.distance[static_cast<size_t>(c)] = std::move(sq);
    }

    MindFeatures f;
    f.dims = d;
    f.values.resize(count * kMindChannels);
    cache.variance.resize(count);
    cache.variance_clamped.resize(count);
    cache.argmin.resize(count);
    for (size_t n = 0; n < count; ++n) {
        double mean = 0.0;
        int best = 0;
        for (int c = 0; c < kMindChannels; ++c) {
            const double v = cache.distance[static_cast<size_t>(c)][n];
            mean += v;
            if (v < cache.distance[static_cast<size_t>(best)][n]) best = c;
        }
        mean /= kMindChannels;
        const bool clamped = !(mean > kMindVarianceFloor);
        const double var = clamped ? kMindVarianceFloor : mean;
        cache.variance[n] = var;
        cache.variance_clamped[n] = clamped ? 1 : 0;
        cache.argmin[n] = static_cast<unsigned char>(best);
        const double dmin = cache.distance[static_cast<size_t>(best)][n];
        for (int c = 0; c < kMindChannels; ++c) {
            f.values[n * kMindChannels + static_cast<size_t>(c)] =
                (c == best) ? 1.0 : std::exp(-(cache.distance[static_cast<size_t>(c)][n] - dmin) / var);
        }
    }
    return f;
}

std::vector<double> mind_features_backward(const Volume &vol, const MindFeatures &features, const MindCache &cache,
                                           const std::vector<double> &grad_features) {
    const Index3 &d = vol.dims();
    const size_t count = vol.size();
    std::array<std::vector<double>, kMindChannels> gd;
    for (auto &g : gd) g.assign(count, 0.0);

    for (size_t n = 0; n < count; ++n) {
        const int best = cache.argmin[n];
        const double var = cache.variance[n];
        const double dmin = cache.distance[static_cast<size_t>(best)][n];
        double gvar = 0.0;
        for (int c = 0; c < kMindChannels; ++c) {
            if (c == best) continue;
            const double g = grad_features[n * kMindChannels + static_cast<size_t>(c)];
            if (g == 0.0) continue;
            const double f = features.values[n * kMindChannels + static_cast<size_t>(c)];
            const double dc = cache.distance[static_cast<size_t>(c)][n];
            gd[static_cast<size_t>(c)][n] -= g * f / var;
            gd[static_cast<size_t>(best)][n] += g * f / var;
            gvar += g * f * (dc - dmin) / (var * var);
        }
        if (!cache.variance_clamped[n] && gvar != 0.0) {
            for (int c = 0; c < kMindChannels; ++c) gd[static_cast<size_t>(c)][n] += gvar / kMindChannels;
        }
    }

    const auto w = vol.data();
    std::vector<double> gw(count, 0.0);
    for (int c = 0; c < kMindChannels; ++c) {
        std::vector<double> g = std::move(gd[static_cast<size_t>(c)]);
        for (int a = 2; a >= 0; --a) g = convolve_axis_adjoint(g, d, a);
        for (int64_t k = 0; k < d[2]; ++k)
            for (int64_t j = 0; j < d[1]; ++j)
                for (int64_t i = 0; i < d[0]; ++i) {
                    const size_t n = vol.index(i, j, k);
                    const auto m = static_cast<size_t>(neighbour(d, i, j, k, kMindOffsets[static_cast<size_t>(c)]));
                    const double t = 2.0 * (w[n] - w[m]) * g[n];
                    gw[n] += t;
                    gw[m] -= t;
                }
    }
    return gw;
}

} // namespace smind
