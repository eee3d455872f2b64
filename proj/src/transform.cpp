// transform.cpp - 9-DOF affine transforms, dense displacement fields and trilinear warping.

#include "smind/transform.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace smind {

namespace {

using Mat3 = std::array<std::array<double, 3>, 3>;

Mat3 mul3(const Mat3 &a, const Mat3 &b) {
    Mat3 r{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            double s = 0.0;
            for (int k = 0; k < 3; ++k) s += a[i][k] * b[k][j];
            r[i][j] = s;
        }
    return r;
}

Mat3 rot_x(double a, bool derivative) {
    const double c = std::cos(a), s = std::sin(a);
    if (derivative) return Mat3{{{0, 0, 0}, {0, -s, -c}, {0, c, -s}}};
    return Mat3{{{1, 0, 0}, {0, c, -s}, {0, s, c}}};
}

Mat3 rot_y(double a, bool derivative) {
    const double c = std::cos(a), s = std::sin(a);
    if (derivative) return Mat3{{{-s, 0, c}, {0, 0, 0}, {-c, 0, -s}}};
    return Mat3{{{c, 0, s}, {0, 1, 0}, {-s, 0, c}}};
}

Mat3 rot_z(double a, bool derivative) {
    const double c = std::cos(a), s = std::sin(a);
    if (derivative) return Mat3{{{-s, -c, 0}, {c, -s, 0}, {0, 0, 0}}};
    return Mat3{{{c, -s, 0}, {s, c, 0}, {0, 0, 1}}};
}

Mat3 diag3(const Vec3 &d) { return Mat3{{{d[0], 0, 0}, {0, d[1], 0}, {0, 0, d[2]}}}; }

// Assemble [L | offset] with offset = pre_translation - L * center.
Mat4 assemble(const Mat3 &lin, const Vec3 &pre_translation, const Vec3 &center) {
    Mat4 m{};
    for (int r = 0; r < 3; ++r) {
        double lc = 0.0;
        for (int c = 0; c < 3; ++c) {
            m[r][c] = lin[r][c];
            lc += lin[r][c] * center[c];
        }
        m[r][3] = pre_translation[r] - lc;
    }
    m[3] = {0.0, 0.0, 0.0, 1.0};
    return m;
}

// One-dimensional linear resize along an axis with centre-aligned, edge clamped taps.
struct Tap {
    int64_t lo;
    int64_t hi;
    double w;
};

std::vector<Tap> resize_taps(int64_t n_src, int64_t n_dst) {
    std::vector<Tap> taps(static_cast<size_t>(n_dst));
    const double ratio = static_cast<double>(n_src) / static_cast<double>(n_dst);
    for (int64_t i = 0; i < n_dst; ++i) {
        const double c = (static_cast<double>(i) + 0.5) * ratio - 0.5;
        Tap t{0, 0, 0.0};
        if (n_src == 1 || c <= 0.0) {
            t = {0, 0, 0.0};
        } else if (c >= static_cast<double>(n_src - 1)) {
            t = {n_src - 1, n_src - 1, 0.0};
        } else {
            const auto lo = static_cast<int64_t>(std::floor(c));
            t = {lo, lo + 1, c - static_cast<double>(lo)};
        }
        taps[static_cast<size_t>(i)] = t;
    }
    return taps;
}

size_t flat(const Index3 &d, int64_t i, int64_t j, int64_t k) { return static_cast<size_t>(i + d[0] * (j + d[1] * k)); }

std::vector<double> resize_axis(const std::vector<double> &src, const Index3 &src_dims, int axis, int64_t n_dst) {
    Index3 dst_dims = src_dims;
    dst_dims[axis] = n_dst;
    std::vector<double> dst(static_cast<size_t>(dst_dims[0] * dst_dims[1] * dst_dims[2]));
    const auto taps = resize_taps(src_dims[axis], n_dst);
    for (int64_t k = 0; k < dst_dims[2]; ++k)
        for (int64_t j = 0; j < dst_dims[1]; ++j)
            for (int64_t i = 0; i < dst_dims[0]; ++i) {
                Index3 idx{i, j, k};
                const Tap &t = taps[static_cast<size_t>(idx[axis])];
                Index3 lo = idx, hi = idx;
                lo[axis] = t.lo;
                hi[axis] = t.hi;
                const double a = src[flat(src_dims, lo[0], lo[1], lo[2])];
                const double b = src[flat(src_dims, hi[0], hi[1], hi[2])];
                dst[flat(dst_dims, i, j, k)] = a + t.w * (b - a);
            }
    return dst;
}

std::vector<double> resize_axis_adjoint(const std::vector<double> &g_dst, const Index3 &dst_dims, int axis,
                                        int64_t n_src) {
    Index3 src_dims = dst_dims;
    src_dims[axis] = n_src;
    std::vector<double> g_src(static_cast<size_t>(src_dims[0] * src_dims[1] * src_dims[2]), 0.0);
    const auto taps = resize_taps(n_src, dst_dims[axis]);
    for (int64_t k = 0; k < dst_dims[2]; ++k)
        for (int64_t j = 0; j < dst_dims[1]; ++j)
            for (int64_t i = 0; i < dst_dims[0]; ++i) {
                Index3 idx{i, j, k};
                const Tap &t = taps[static_cast<size_t>(idx[axis])];
                Index3 lo = idx, hi = idx;
                lo[axis] = t.lo;
                hi[axis] = t.hi;
                const double g = g_dst[flat(dst_dims, i, j, k)];
                g_src[flat(src_dims, lo[0], lo[1], lo[2])] += (1.0 - t.w) * g;
                g_src[flat(src_dims, hi[0], hi[1], hi[2])] += t.w * g;
            }
    return g_src;
}

std::vector<double> extract_component(const DeformationField &f, int c) {
    std::vector<double> out(f.voxels());
    auto d = f.data();
    for (size_t n = 0; n < out.size(); ++n) out[n] = d[3 * n + static_cast<size_t>(c)];
    return out;
}

void insert_component(DeformationField &f, int c, const std::vector<double> &v, double scale) {
    auto d = f.data();
    for (size_t n = 0; n < v.size(); ++n) d[3 * n + static_cast<size_t>(c)] += scale * v[n];
}

} // namespace

std::array<double, AffineParams::kDof> AffineParams::to_array() const {
    return {rot[0], rot[1], rot[2], trans[0], trans[1], trans[2], scale[0], scale[1], scale[2]};
}

AffineParams AffineParams::from_array(std::span<const double> v) {
    if (v.size() != static_cast<size_t>(kDof)) throw std::invalid_argument("AffineParams::from_array: need 9 values");
    return AffineParams{{v[0], v[1], v[2]}, {v[3], v[4], v[5]}, {v[6], v[7], v[8]}};
}

Mat4 identity_mat4() {
    Mat4 m{};
    for (int i = 0; i < 4; ++i) m[i][i] = 1.0;
    return m;
}

Mat4 multiply(const Mat4 &a, const Mat4 &b) {
    Mat4 r{};
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) {
            double s = 0.0;
            for (int k = 0; k < 4; ++k) s += a[i][k] * b[k][j];
            r[i][j] = s;
        }
    return r;
}

Mat4 invert(const Mat4 &m) {
    // Gauss-Jordan with partial pivoting.
    Mat4 a = m;
    Mat4 inv = identity_mat4();
    for (int col = 0; col < 4; ++col) {
        int pivot = col;
        for (int r = col + 1; r < 4; ++r)
            if (std::abs(a[r][col]) > std::abs(a[pivot][col])) pivot = r;
        if (std::abs(a[pivot][col]) < 1e-300) throw std::runtime_error("invert: singular matrix");
        std::swap(a[col], a[pivot]);
        std::swap(inv[col], inv[pivot]);
        const double d = a[col][col];
        if (d != 1.0) {
            for (int c = 0; c < 4; ++c) {
                a[col][c] /= d;
                inv[col][c] /= d;
            }
        }
        for (int r = 0; r < 4; ++r) {
            if (r == col || a[r][col] == 0.0) continue;
            const double f = a[r][col];
            for (int c = 0; c < 4; ++c) {
                a[r][c] -= f * a[col][c];
                inv[r][c] -= f * inv[col][c];
            }
        }
    }
    return inv;
}

Vec3 apply(const Mat4 &m, const Vec3 &p) {
    Vec3 r{};
    for (int i = 0; i < 3; ++i) r[i] = m[i][0] * p[0] + m[i][1] * p[1] + m[i][2] * p[2] + m[i][3];
    return r;
}

Mat4 affine_matrix(const AffineParams &p, const Vec3 &center) {
    for (double s : p.scale) {
        if (!(s > 0.0)) throw std::invalid_argument("affine_matrix: scales must be positive");
    }
    const Mat3 lin = mul3(mul3(mul3(rot_z(p.rot[2], false), rot_y(p.rot[1], false)), rot_x(p.rot[0], false)),
                          diag3(p.scale));
    const Vec3 pre{center[0] + p.trans[0], center[1] + p.trans[1], center[2] + p.trans[2]};
    return assemble(lin, pre, center);
}

Mat4 affine_matrix_derivative(const AffineParams &p, const Vec3 &center, int k) {
    if (k < 0 || k >= AffineParams::kDof) throw std::invalid_argument("affine_matrix_derivative: index out of range");
    if (k >= 3 && k < 6) {
        Mat4 d{};
        d[k - 3][3] = 1.0;
        return d;
    }
    Mat3 rz = rot_z(p.rot[2], k == 2);
    Mat3 ry = rot_y(p.rot[1], k == 1);
    Mat3 rx = rot_x(p.rot[0], k == 0);
    Mat3 s = diag3(p.scale);
    if (k >= 6) {
        s = Mat3{};
        s[k - 6][k - 6] = 1.0;
    }
    const Mat3 lin = mul3(mul3(mul3(rz, ry), rx), s);
    Mat4 d = assemble(lin, Vec3{0.0, 0.0, 0.0}, center);
    d[3] = {0.0, 0.0, 0.0, 0.0}; // derivative of the homogeneous row
    return d;
}

Mat4 voxel_sampling_matrix(const Mat4 &world_matrix, const Vec3 &spacing) {
    const Mat4 inv = invert(world_matrix);
    Mat4 v{};
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) v[r][c] = inv[r][c] * spacing[c] / spacing[r];
        v[r][3] = inv[r][3] / spacing[r];
    }
    v[3] = {0.0, 0.0, 0.0, 1.0};
    return v;
}

double trilinear_sample(const Volume &vol, const Vec3 &p) {
    int64_t lo[3];
    int64_t hi[3];
    double w[3];
    for (int a = 0; a < 3; ++a) {
        const int64_t n = vol.dims()[a];
        if (!(p[a] >= 0.0) || p[a] > static_cast<double>(n - 1)) return 0.0;
        int64_t l = static_cast<int64_t>(std::floor(p[a]));
        if (l >= n - 1) l = std::max<int64_t>(0, n - 2);
        lo[a] = l;
        hi[a] = std::min(l + 1, n - 1);
        w[a] = p[a] - static_cast<double>(l);
    }
    auto lerp = [](double a, double b, double t) { return a + t * (b - a); };
    const double c00 = lerp(vol(lo[0], lo[1], lo[2]), vol(hi[0], lo[1], lo[2]), w[0]);
    const double c10 = lerp(vol(lo[0], hi[1], lo[2]), vol(hi[0], hi[1], lo[2]), w[0]);
    const double c01 = lerp(vol(lo[0], lo[1], hi[2]), vol(hi[0], lo[1], hi[2]), w[0]);
    const double c11 = lerp(vol(lo[0], hi[1], hi[2]), vol(hi[0], hi[1], hi[2]), w[0]);
    return lerp(lerp(c00, c10, w[1]), lerp(c01, c11, w[1]), w[2]);
}

SampleWithGradient trilinear_sample_gradient(const Volume &vol, const Vec3 &p) {
    SampleWithGradient out;
    int64_t lo[3];
    int64_t hi[3];
    double w[3];
    bool on_node[3];
    for (int a = 0; a < 3; ++a) {
        const int64_t n = vol.dims()[a];
        if (!(p[a] >= 0.0) || p[a] > static_cast<double>(n - 1)) return out;
        int64_t l = static_cast<int64_t>(std::floor(p[a]));
        if (l >= n - 1) l = std::max<int64_t>(0, n - 2);
        lo[a] = l;
        hi[a] = std::min(l + 1, n - 1);
        w[a] = p[a] - static_cast<double>(l);
        on_node[a] = (w[a] == 0.0 && l > 0 && hi[a] > l);
    }
    double c[2][2][2];
    for (int dk = 0; dk < 2; ++dk)
        for (int dj = 0; dj < 2; ++dj)
            for (int di = 0; di < 2; ++di)
                c[di][dj][dk] = vol(di ? hi[0] : lo[0], dj ? hi[1] : lo[1], dk ? hi[2] : lo[2]);

    const double wx[2] = {1.0 - w[0], w[0]};
    const double wy[2] = {1.0 - w[1], w[1]};
    const double wz[2] = {1.0 - w[2], w[2]};
    double v = 0.0, gx = 0.0, gy = 0.0, gz = 0.0;
    for (int dk = 0; dk < 2; ++dk)
        for (int dj = 0; dj < 2; ++dj)
            for (int di = 0; di < 2; ++di) {
                const double val = c[di][dj][dk];
                v += wx[di] * wy[dj] * wz[dk] * val;
                gx += (di ? 1.0 : -1.0) * wy[dj] * wz[dk] * val;
                gy += wx[di] * (dj ? 1.0 : -1.0) * wz[dk] * val;
                gz += wx[di] * wy[dj] * (dk ? 1.0 : -1.0) * val;
            }
    out.value = v;
    out.grad = {gx, gy, gz};

    // Central slope across interior grid planes: average with the cell below.
    for (int a = 0; a < 3; ++a) {
        if (!on_node[a]) continue;
        int64_t blo[3] = {lo[0], lo[1], lo[2]};
        int64_t bhi[3] = {hi[0], hi[1], hi[2]};
        blo[a] = lo[a] - 1;
        bhi[a] = lo[a];
        double g = 0.0;
        for (int dk = 0; dk < 2; ++dk)
            for (int dj = 0; dj < 2; ++dj)
                for (int di = 0; di < 2; ++di) {
                    const double val = vol(di ? bhi[0] : blo[0], dj ? bhi[1] : blo[1], dk ? bhi[2] : blo[2]);
                    const double wa[3] = {a == 0 ? (di ? 1.0 : -1.0) : wx[di], a == 1 ? (dj ? 1.0 : -1.0) : wy[dj],
                                          a == 2 ? (dk ? 1.0 : -1.0) : wz[dk]};
                    g += wa[0] * wa[1] * wa[2] * val;
                }
        out.grad[a] = 0.5 * (out.grad[a] + g);
    }
    return out;
}

Volume warp_affine(const Volume &vol, const AffineParams &p, Boundary boundary) {
    const Mat4 a = voxel_sampling_matrix(affine_matrix(p, vol.center()), vol.spacing());
    Volume out(vol.dims(), vol.spacing());
    for (int64_t k = 0; k < vol.nz(); ++k)
        for (int64_t j = 0; j < vol.ny(); ++j)
            for (int64_t i = 0; i < vol.nx(); ++i) {
                Vec3 q = smind::apply(a, Vec3{static_cast<double>(i), static_cast<double>(j), static_cast<double>(k)});
                if (boundary == Boundary::clamp)
                    for (int c = 0; c < 3; ++c) q[c] = std::clamp(q[c], 0.0, static_cast<double>(vol.dims()[c] - 1));
                out(i, j, k) = trilinear_sample(vol, q);
            }
    return out;
}

DeformationField::DeformationField(Index3 dims, Vec3 spacing) : dims_(dims), spacing_(spacing) {
    for (auto d : dims_)
        if (d <= 0) throw std::invalid_argument("DeformationField dims must be positive");
    disp_.assign(static_cast<size_t>(3 * dims_[0] * dims_[1] * dims_[2]), 0.0);
}

DeformationField::DeformationField(Index3 dims, Vec3 spacing, std::vector<double> disp)
    : dims_(dims), spacing_(spacing), disp_(std::move(disp)) {
    for (auto d : dims_)
        if (d <= 0) throw std::invalid_argument("DeformationField dims must be positive");
    if (disp_.size() != static_cast<size_t>(3 * dims_[0] * dims_[1] * dims_[2])) {
        throw std::invalid_argument("DeformationField data length " + std::to_string(disp_.size()) +
                                    " does not match 3 * dims product");
    }
}

Volume warp_dense(const Volume &vol, const DeformationField &field) {
    if (field.dims() != vol.dims()) throw std::invalid_argument("warp_dense: field dims differ from volume dims");
    Volume out(vol.dims(), vol.spacing());
    for (int64_t k = 0; k < vol.nz(); ++k)
        for (int64_t j = 0; j < vol.ny(); ++j)
            for (int64_t i = 0; i < vol.nx(); ++i) {
                const Vec3 q{static_cast<double>(i) + field.at(i, j, k, 0), static_cast<double>(j) + field.at(i, j, k, 1),
                             static_cast<double>(k) + field.at(i, j, k, 2)};
                out(i, j, k) = trilinear_sample(vol, q);
            }
    return out;
}

DeformationField affine_displacement(const Volume &grid, const AffineParams &p) {
    const Mat4 a = voxel_sampling_matrix(affine_matrix(p, grid.center()), grid.spacing());
    DeformationField f(grid.dims(), grid.spacing());
    for (int64_t k = 0; k < grid.nz(); ++k)
        for (int64_t j = 0; j < grid.ny(); ++j)
            for (int64_t i = 0; i < grid.nx(); ++i) {
                const Vec3 x{static_cast<double>(i), static_cast<double>(j), static_cast<double>(k)};
                const Vec3 q = smind::apply(a, x);
                for (int c = 0; c < 3; ++c) f.at(i, j, k, c) = q[c] - x[c];
            }
    return f;
}

MultiResField make_multires(const Volume &reference, int levels) {
    if (levels < 1) throw std::invalid_argument("make_multires: levels must be >= 1");
    MultiResField f;
    Index3 dims = reference.dims();
    Vec3 spacing = reference.spacing();
    std::vector<DeformationField> fine_to_coarse;
    for (int l = 0; l < levels; ++l) {
        if (l > 0) {
            for (int a = 0; a < 3; ++a) {
                if (dims[a] / 2 < 2) {
                    throw std::invalid_argument("make_multires: too many levels for the reference dims");
                }
                dims[a] /= 2;
                spacing[a] *= 2.0;
            }
        }
        fine_to_coarse.emplace_back(dims, spacing);
    }
    f.residuals.assign(fine_to_coarse.rbegin(), fine_to_coarse.rend());
    return f;
}

DeformationField upsample_field(const DeformationField &field, const Index3 &target_dims, const Vec3 &target_spacing) {
    if (field.dims() == target_dims) {
        return DeformationField(target_dims, target_spacing, std::vector<double>(field.data().begin(), field.data().end()));
    }
    DeformationField out(target_dims, target_spacing);
    for (int c = 0; c < 3; ++c) {
        std::vector<double> comp = extract_component(field, c);
        Index3 d = field.dims();
        for (int a = 0; a < 3; ++a) {
            comp = resize_axis(comp, d, a, target_dims[a]);
            d[a] = target_dims[a];
        }
        const double ratio = static_cast<double>(target_dims[c]) / static_cast<double>(field.dims()[c]);
        insert_component(out, c, comp, ratio);
    }
    return out;
}

DeformationField upsample_field_adjoint(const DeformationField &grad, const Index3 &source_dims,
                                        const Vec3 &source_spacing) {
    if (grad.dims() == source_dims) {
        return DeformationField(source_dims, source_spacing, std::vector<double>(grad.data().begin(), grad.data().end()));
    }
    DeformationField out(source_dims, source_spacing);
    for (int c = 0; c < 3; ++c) {
        std::vector<double> comp = extract_component(grad, c);
        Index3 d = grad.dims();
        for (int a = 2; a >= 0; --a) {
            comp = resize_axis_adjoint(comp, d, a, source_dims[a]);
            d[a] = source_dims[a];
        }
        const double ratio = static_cast<double>(grad.dims()[c]) / static_cast<double>(source_dims[c]);
        insert_component(out, c, comp, ratio);
    }
    return out;
}

DeformationField compose_multires(const MultiResField &f) {
    if (f.residuals.empty()) throw std::invalid_argument("compose_multires: no residual fields");
    for (size_t l = 0; l + 1 < f.residuals.size(); ++l) {
        const auto &coarse = f.residuals[l].dims();
        const auto &fine = f.residuals[l + 1].dims();
        for (int a = 0; a < 3; ++a) {
            if (coarse[a] != fine[a] / 2) {
                throw std::invalid_argument("compose_multires: level " + std::to_string(l) +
                                            " dims are not half of level " + std::to_string(l + 1));
            }
        }
    }
    const DeformationField &finest = f.residuals.back();
    DeformationField total(finest.dims(), finest.spacing(),
                           std::vector<double>(finest.data().begin(), finest.data().end()));
    for (size_t l = 0; l + 1 < f.residuals.size(); ++l) {
        const DeformationField up = upsample_field(f.residuals[l], finest.dims(), finest.spacing());
        auto dst = total.data();
        auto src = up.data();
        for (size_t n = 0; n < dst.size(); ++n) dst[n] += src[n];
    }
    return total;
}

} // namespace smind
