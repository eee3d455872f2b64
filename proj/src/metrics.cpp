// metrics.cpp - overlap and deformation-regularity metrics.

#include "smind/metrics.hpp"

#include <cmath>
#include <stdexcept>

namespace smind {

namespace {

double derivative(const DeformationField &f, int64_t i, int64_t j, int64_t k, int c, int axis) {
    const Index3 &d = f.dims();
    Index3 lo{i, j, k};
    Index3 hi{i, j, k};
    const int64_t t = lo[axis];
    double denom = 2.0;
    if (d[axis] == 1) return 0.0;
    if (t == 0) {
        hi[axis] = 1;
        denom = 1.0;
    } else if (t == d[axis] - 1) {
        lo[axis] = t - 1;
        denom = 1.0;
    } else {
        lo[axis] = t - 1;
        hi[axis] = t + 1;
    }
    return (f.at(hi[0], hi[1], hi[2], c) - f.at(lo[0], lo[1], lo[2], c)) / denom;
}

} // namespace

size_t LabelMask::count() const {
    size_t n = 0;
    for (double v : values.data())
        if (v != 0.0) ++n;
    return n;
}

LabelMask make_mask(const Volume &v, double threshold) {
    Volume out(v.dims(), v.spacing());
    for (size_t n = 0; n < v.size(); ++n) out[n] = v[n] >= threshold ? 1.0 : 0.0;
    return LabelMask{std::move(out)};
}

double dice(const LabelMask &a, const LabelMask &b) {
    if (a.values.dims() != b.values.dims()) throw std::invalid_argument("dice: mask dims differ");
    size_t na = 0, nb = 0, both = 0;
    for (size_t n = 0; n < a.values.size(); ++n) {
        const bool x = a.values[n] != 0.0;
        const bool y = b.values[n] != 0.0;
        na += x;
        nb += y;
        both += (x && y);
    }
    if (na + nb == 0) return 1.0;
    return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

LabelMask warp_mask(const LabelMask &mask, const DeformationField &field) {
    return make_mask(warp_dense(mask.values, field), 0.5);
}

LabelMask warp_mask(const LabelMask &mask, const AffineParams &p) { return make_mask(warp_affine(mask.values, p), 0.5); }

Volume jacobian_determinant(const DeformationField &field) {
    const Index3 &d = field.dims();
    Volume out(d, field.spacing());
    for (int64_t k = 0; k < d[2]; ++k)
        for (int64_t j = 0; j < d[1]; ++j)
            for (int64_t i = 0; i < d[0]; ++i) {
                double m[3][3];
                for (int c = 0; c < 3; ++c)
                    for (int a = 0; a < 3; ++a) m[c][a] = (c == a ? 1.0 : 0.0) + derivative(field, i, j, k, c, a);
                out(i, j, k) = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
                               m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
                               m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
            }
    return out;
}

JacobianStats jacobian_stats(const DeformationField &field) {
    const Volume jac = jacobian_determinant(field);
    size_t folded = 0;
    size_t used = 0;
    double sum = 0.0;
    for (double j : jac.data()) {
        if (j <= 0.0) ++folded;
        if (j > kLogJacobianFloor) {
            sum += std::log(j);
            ++used;
        }
    }
    JacobianStats s;
    s.folding_percent = 100.0 * static_cast<double>(folded) / static_cast<double>(jac.size());
    if (used > 0) {
        const double mean = sum / static_cast<double>(used);
        double var = 0.0;
        for (double j : jac.data()) {
            if (j > kLogJacobianFloor) {
                const double e = std::log(j) - mean;
                var += e * e;
            }
        }
        s.sigma_log_j = std::sqrt(var / static_cast<double>(used));
    }
    return s;
}

} // namespace smind
