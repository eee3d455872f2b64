// volume.cpp - dense 3D scalar volumes, spatial and intensity normalization, pyramids.

#include "smind/volume.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace smind {

namespace {

void check_dims_and_spacing(const Index3 &dims, const Vec3 &spacing) {
    for (int a = 0; a < 3; ++a) {
        if (dims[a] <= 0) {
            throw std::invalid_argument("Volume dims must be positive (axis " + std::to_string(a) + ")");
        }
        if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a])) {
            throw std::invalid_argument("Volume spacing must be positive (axis " + std::to_string(a) + ")");
        }
    }
}

size_t voxel_count(const Index3 &dims) {
    return static_cast<size_t>(dims[0]) * static_cast<size_t>(dims[1]) * static_cast<size_t>(dims[2]);
}

int64_t floor_div2(int64_t v) { return (v >= 0) ? v / 2 : -((-v + 1) / 2); }

// Linear interpolation weights along one axis with edge clamping.
struct AxisTap {
    int64_t lo;
    int64_t hi;
    double w;
};

AxisTap clamped_tap(double p, int64_t n) {
    if (n == 1 || p <= 0.0) return {0, 0, 0.0};
    if (p >= static_cast<double>(n - 1)) return {n - 1, n - 1, 0.0};
    const auto lo = static_cast<int64_t>(std::floor(p));
    return {lo, lo + 1, p - static_cast<double>(lo)};
}

} // namespace

Volume::Volume(Index3 dims, Vec3 spacing, double fill) : dims_(dims), spacing_(spacing) {
    check_dims_and_spacing(dims_, spacing_);
    data_.assign(voxel_count(dims_), fill);
}

Volume::Volume(Index3 dims, Vec3 spacing, std::vector<double> data)
    : dims_(dims), spacing_(spacing), data_(std::move(data)) {
    check_dims_and_spacing(dims_, spacing_);
    if (data_.size() != voxel_count(dims_)) {
        throw std::invalid_argument("Volume data length " + std::to_string(data_.size()) +
                                    " does not match dims product " + std::to_string(voxel_count(dims_)));
    }
}

Vec3 Volume::center() const {
    return {0.5 * static_cast<double>(dims_[0] - 1) * spacing_[0],
            0.5 * static_cast<double>(dims_[1] - 1) * spacing_[1],
            0.5 * static_cast<double>(dims_[2] - 1) * spacing_[2]};
}

Volume resample(const Volume &vol, const Vec3 &target_spacing) {
    for (double t : target_spacing) {
        if (!(t > 0.0) || !std::isfinite(t)) throw std::invalid_argument("resample: target spacing must be positive");
    }
    if (target_spacing == vol.spacing()) return vol;

    Index3 out_dims{};
    for (int a = 0; a < 3; ++a) {
        const double n = std::round(static_cast<double>(vol.dims()[a]) * vol.spacing()[a] / target_spacing[a]);
        out_dims[a] = std::max<int64_t>(1, static_cast<int64_t>(n));
    }
    Volume out(out_dims, target_spacing);

    // Separable: precompute taps per axis.
    std::array<std::vector<AxisTap>, 3> taps;
    for (int a = 0; a < 3; ++a) {
        taps[a].resize(static_cast<size_t>(out_dims[a]));
        for (int64_t i = 0; i < out_dims[a]; ++i) {
            const double p = static_cast<double>(i) * target_spacing[a] / vol.spacing()[a];
            taps[a][static_cast<size_t>(i)] = clamped_tap(p, vol.dims()[a]);
        }
    }
    for (int64_t k = 0; k < out_dims[2]; ++k) {
        const auto &tz = taps[2][static_cast<size_t>(k)];
        for (int64_t j = 0; j < out_dims[1]; ++j) {
            const auto &ty = taps[1][static_cast<size_t>(j)];
            for (int64_t i = 0; i < out_dims[0]; ++i) {
                const auto &tx = taps[0][static_cast<size_t>(i)];
                auto lerp_x = [&](int64_t jj, int64_t kk) {
                    const double a = vol(tx.lo, jj, kk);
                    return a + tx.w * (vol(tx.hi, jj, kk) - a);
                };
                auto lerp_xy = [&](int64_t kk) {
                    const double a = lerp_x(ty.lo, kk);
                    return a + ty.w * (lerp_x(ty.hi, kk) - a);
                };
                const double a = lerp_xy(tz.lo);
                out(i, j, k) = a + tz.w * (lerp_xy(tz.hi) - a);
            }
        }
    }
    return out;
}

Volume crop_or_pad(const Volume &vol, const Index3 &target_dims) {
    for (auto d : target_dims) {
        if (d <= 0) throw std::invalid_argument("crop_or_pad: target dims must be positive");
    }
    if (target_dims == vol.dims()) return vol;

    Index3 offset{};
    for (int a = 0; a < 3; ++a) offset[a] = floor_div2(target_dims[a] - vol.dims()[a]);

    Volume out(target_dims, vol.spacing(), 0.0);
    for (int64_t k = 0; k < target_dims[2]; ++k) {
        const int64_t sk = k - offset[2];
        if (sk < 0 || sk >= vol.nz()) continue;
        for (int64_t j = 0; j < target_dims[1]; ++j) {
            const int64_t sj = j - offset[1];
            if (sj < 0 || sj >= vol.ny()) continue;
            for (int64_t i = 0; i < target_dims[0]; ++i) {
                const int64_t si = i - offset[0];
                if (si < 0 || si >= vol.nx()) continue;
                out(i, j, k) = vol(si, sj, sk);
            }
        }
    }
    return out;
}

Volume normalize_intensity(const Volume &vol) {
    Volume out(vol.dims(), vol.spacing(), 0.0);
    if (vol.size() == 0) return out;
    for (size_t n = 0; n < vol.size(); ++n) {
        if (!std::isfinite(vol[n])) {
            throw std::invalid_argument("normalize_intensity: non-finite intensity at voxel " + std::to_string(n));
        }
    }
    const auto [lo_it, hi_it] = std::minmax_element(vol.data().begin(), vol.data().end());
    const double lo = *lo_it;
    const double hi = *hi_it;
    if (!(hi > lo)) return out;
    const double inv = 1.0 / (hi - lo);
    auto dst = out.data();
    auto src = vol.data();
    for (size_t n = 0; n < src.size(); ++n) dst[n] = std::clamp((src[n] - lo) * inv, 0.0, 1.0);
    return out;
}

Volume gaussian_smooth(const Volume &vol, double sigma) {
    if (!(sigma > 0.0)) return vol;
    const int r = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> taps(static_cast<size_t>(2 * r + 1));
    double sum = 0.0;
    for (int t = -r; t <= r; ++t) {
        taps[static_cast<size_t>(t + r)] = std::exp(-0.5 * t * t / (sigma * sigma));
        sum += taps[static_cast<size_t>(t + r)];
    }
    for (double &w : taps) w /= sum;

    Volume cur = vol;
    for (int axis = 0; axis < 3; ++axis) {
        Volume out(vol.dims(), vol.spacing());
        const int64_t n = vol.dims()[axis];
        for (int64_t k = 0; k < vol.nz(); ++k)
            for (int64_t j = 0; j < vol.ny(); ++j)
                for (int64_t i = 0; i < vol.nx(); ++i) {
                    Index3 q{i, j, k};
                    const int64_t c = q[axis];
                    double acc = 0.0;
                    for (int t = -r; t <= r; ++t) {
                        q[axis] = std::clamp<int64_t>(c + t, 0, n - 1);
                        acc += taps[static_cast<size_t>(t + r)] * cur(q[0], q[1], q[2]);
                    }
                    out(i, j, k) = acc;
                }
        cur = std::move(out);
    }
    return cur;
}

Volume downsample2(const Volume &vol) {
    for (int a = 0; a < 3; ++a) {
        if (vol.dims()[a] < 2) {
            throw std::invalid_argument("downsample2: every dim must be >= 2 (axis " + std::to_string(a) + " is " +
                                        std::to_string(vol.dims()[a]) + ")");
        }
    }
    const Index3 dims{vol.nx() / 2, vol.ny() / 2, vol.nz() / 2};
    const Vec3 spacing{vol.spacing()[0] * 2.0, vol.spacing()[1] * 2.0, vol.spacing()[2] * 2.0};
    Volume out(dims, spacing);
    for (int64_t k = 0; k < dims[2]; ++k) {
        for (int64_t j = 0; j < dims[1]; ++j) {
            for (int64_t i = 0; i < dims[0]; ++i) {
                double s = 0.0;
                for (int64_t dk = 0; dk < 2; ++dk)
                    for (int64_t dj = 0; dj < 2; ++dj)
                        for (int64_t di = 0; di < 2; ++di) s += vol(2 * i + di, 2 * j + dj, 2 * k + dk);
                out(i, j, k) = s * 0.125;
            }
        }
    }
    return out;
}

std::vector<Volume> build_pyramid(const Volume &vol, int levels) {
    if (levels < 1) throw std::invalid_argument("build_pyramid: levels must be >= 1");
    std::vector<Volume> pyramid;
    pyramid.reserve(static_cast<size_t>(levels));
    pyramid.push_back(vol);
    for (int l = 1; l < levels; ++l) {
        const Volume &finer = pyramid.back();
        for (auto d : finer.dims()) {
            if (d / 2 < 2) {
                throw std::invalid_argument("build_pyramid: " + std::to_string(levels) +
                                            " levels is too many for the input dims");
            }
        }
        pyramid.push_back(downsample2(finer));
    }
    std::reverse(pyramid.begin(), pyramid.end());
    return pyramid;
}

Volume preprocess(const Volume &vol, const GridSpec &grid) {
    return crop_or_pad(resample(normalize_intensity(vol), grid.target_spacing), grid.target_dims);
}

} // namespace smind
