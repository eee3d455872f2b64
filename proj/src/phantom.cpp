// phantom.cpp - deterministic synthetic multi-modal volume pairs with known transforms.

#include "smind/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <random>
#include <stdexcept>
#include <vector>

namespace smind {

namespace {

// Portable draws: std distributions are implementation-defined, the raw engine is not.
class Rng {
  public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
        has_spare_ = true;
        return r * std::cos(2.0 * std::numbers::pi * u2);
    }

  private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

struct Blob {
    Vec3 center;
    Vec3 sigma;
    double amplitude;
};

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

} // namespace

double ModalityRemap::apply(double v) const {
    switch (kind) {
    case RemapKind::identity:
        return v;
    case RemapKind::inverse:
        return 1.0 - v;
    case RemapKind::gamma:
        return std::pow(std::clamp(v, 0.0, 1.0), gamma);
    case RemapKind::sigmoid_bands: {
        // Bright bands on [0.25, 0.5) and above 0.75, dark elsewhere.
        const double w = 0.03;
        const double s = sigmoid((v - 0.25) / w) - sigmoid((v - 0.5) / w) + sigmoid((v - 0.75) / w);
        return std::clamp(s, 0.0, 1.0);
    }
    }
    return v;
}

std::string to_string(RemapKind kind) {
    switch (kind) {
    case RemapKind::identity: return "identity";
    case RemapKind::inverse: return "inverse";
    case RemapKind::gamma: return "gamma";
    case RemapKind::sigmoid_bands: return "sigmoid-bands";
    }
    return "identity";
}

RemapKind parse_remap_kind(const std::string &name) {
    if (name == "identity") return RemapKind::identity;
    if (name == "inverse") return RemapKind::inverse;
    if (name == "gamma") return RemapKind::gamma;
    if (name == "sigmoid-bands") return RemapKind::sigmoid_bands;
    throw std::invalid_argument("unknown modality remap '" + name + "'");
}

void PhantomSpec::validate() const {
    for (int a = 0; a < 3; ++a) {
        if (dims[a] < 4) throw std::invalid_argument("PhantomSpec: dims must be >= 4");
        if (!(spacing[a] > 0.0)) throw std::invalid_argument("PhantomSpec: spacing must be positive");
        if (!(transform.scale[a] > 0.0)) throw std::invalid_argument("PhantomSpec: scales must be positive");
    }
    if (n_blobs < 1) throw std::invalid_argument("PhantomSpec: need at least one blob");
    if (!(noise >= 0.0)) throw std::invalid_argument("PhantomSpec: noise must be >= 0");
    if (remap.kind == RemapKind::gamma && !(remap.gamma > 0.0)) throw std::invalid_argument("PhantomSpec: gamma must be positive");
    if (bump) {
        if (bump->axis < 0 || bump->axis > 2) throw std::invalid_argument("PhantomSpec: bump axis must be 0, 1 or 2");
        if (!(bump->radius > 0.0)) throw std::invalid_argument("PhantomSpec: bump radius must be positive");
        const double limit = static_cast<double>(*std::min_element(dims.begin(), dims.end())) / 8.0;
        if (std::abs(bump->peak) > limit) {
            throw std::invalid_argument("PhantomSpec: bump peak exceeds dims / 8");
        }
    }
}

DeformationField bump_field(const BumpSpec &bump, const Index3 &dims, const Vec3 &spacing) {
    DeformationField f(dims, spacing);
    const double inv = 1.0 / (2.0 * bump.radius * bump.radius);
    for (int64_t k = 0; k < dims[2]; ++k)
        for (int64_t j = 0; j < dims[1]; ++j)
            for (int64_t i = 0; i < dims[0]; ++i) {
                const double dx = static_cast<double>(i) - bump.center[0];
                const double dy = static_cast<double>(j) - bump.center[1];
                const double dz = static_cast<double>(k) - bump.center[2];
                f.at(i, j, k, bump.axis) = bump.peak * std::exp(-(dx * dx + dy * dy + dz * dz) * inv);
            }
    return f;
}

PhantomPair generate_pair(const PhantomSpec &spec) {
    spec.validate();
    Rng rng(spec.seed);
    const Index3 &d = spec.dims;

    std::vector<Blob> blobs;
    for (int b = 0; b < spec.n_blobs; ++b) {
        Blob blob{};
        for (int a = 0; a < 3; ++a) {
            const double n = static_cast<double>(d[a]);
            blob.center[a] = rng.uniform(0.3, 0.7) * (n - 1.0);
            blob.sigma[a] = rng.uniform(0.07, 0.14) * n;
        }
        blob.amplitude = rng.uniform(0.4, 1.0);
        blobs.push_back(blob);
    }
    size_t largest = 0;
    auto extent = [](const Blob &b) { return b.sigma[0] * b.sigma[1] * b.sigma[2]; };
    for (size_t b = 1; b < blobs.size(); ++b)
        if (extent(blobs[b]) > extent(blobs[largest])) largest = b;

    // Continuous model at a voxel position: intensity and membership of the mask.
    auto model = [&](const Vec3 &x, bool &inside) {
        double v = 0.0;
        inside = false;
        for (size_t b = 0; b < blobs.size(); ++b) {
            double r2 = 0.0;
            for (int a = 0; a < 3; ++a) {
                const double t = (x[a] - blobs[b].center[a]) / blobs[b].sigma[a];
                r2 += t * t;
            }
            v += blobs[b].amplitude * std::exp(-0.5 * r2);
            if (b == largest && r2 <= 1.0) inside = true;
        }
        return v;
    };

    // The moving scan images the same continuous object through the ground truth:
    // moving(x) = remap(object(V (x + bump(x)))), V the voxel sampling matrix. Evaluating
    // the model there (rather than resampling the fixed grid) keeps the whole field
    // of view filled with object or background.
    std::optional<DeformationField> bump;
    if (spec.bump) bump = bump_field(*spec.bump, d, spec.spacing);
    const Vec3 center{0.5 * static_cast<double>(d[0] - 1) * spec.spacing[0],
                      0.5 * static_cast<double>(d[1] - 1) * spec.spacing[1],
                      0.5 * static_cast<double>(d[2] - 1) * spec.spacing[2]};
    const Mat4 sampling = voxel_sampling_matrix(affine_matrix(spec.transform, center), spec.spacing);

    Volume raw_fixed(d, spec.spacing), raw_moving(d, spec.spacing);
    Volume mask_fixed(d, spec.spacing), mask_moving(d, spec.spacing);
    for (int64_t k = 0; k < d[2]; ++k)
        for (int64_t j = 0; j < d[1]; ++j)
            for (int64_t i = 0; i < d[0]; ++i) {
                bool inside = false;
                Vec3 x{static_cast<double>(i), static_cast<double>(j), static_cast<double>(k)};
                raw_fixed(i, j, k) = model(x, inside);
                mask_fixed(i, j, k) = inside ? 1.0 : 0.0;
                if (bump)
                    for (int c = 0; c < 3; ++c) x[c] += bump->at(i, j, k, c);
                raw_moving(i, j, k) = model(smind::apply(sampling, x), inside);
                mask_moving(i, j, k) = inside ? 1.0 : 0.0;
            }

    // Both scans share the fixed scan's intensity normalization; noise is drawn
    // independently for each.
    const auto [lo_it, hi_it] = std::minmax_element(raw_fixed.data().begin(), raw_fixed.data().end());
    const double lo = *lo_it;
    const double range = *hi_it > lo ? *hi_it - lo : 1.0;
    Volume fixed(d, spec.spacing), moving(d, spec.spacing);
    for (size_t n = 0; n < fixed.size(); ++n) {
        fixed[n] = (raw_fixed[n] - lo) / range + spec.noise * rng.normal();
        moving[n] = (raw_moving[n] - lo) / range + spec.noise * rng.normal();
    }
    const auto [flo_it, fhi_it] = std::minmax_element(fixed.data().begin(), fixed.data().end());
    const double flo = *flo_it;
    const double frange = *fhi_it > flo ? *fhi_it - flo : 1.0;
    for (size_t n = 0; n < fixed.size(); ++n) {
        fixed[n] = std::clamp((fixed[n] - flo) / frange, 0.0, 1.0);
        moving[n] = spec.remap.apply(std::clamp((moving[n] - flo) / frange, 0.0, 1.0));
    }

    PhantomPair pair;
    pair.fixed = std::move(fixed);
    pair.moving = std::move(moving);
    pair.fixed_mask = LabelMask{std::move(mask_fixed)};
    pair.moving_mask = LabelMask{std::move(mask_moving)};
    pair.ground_truth = spec.transform;
    pair.bump_field = std::move(bump);
    return pair;
}

} // namespace smind
