// transform.hpp - 9-DOF affine transforms, dense displacement fields and trilinear warping.
//
// All warps are backward: the output grid is the input grid, and each output voxel
// samples the input at the transformed location. Dense displacements are in voxel
// units of the grid they live on.

#pragma once

#include <array>
#include <span>
#include <vector>

#include "smind/volume.hpp"

namespace smind {

using Mat4 = std::array<std::array<double, 4>, 4>;

struct AffineParams {
    Vec3 rot{0.0, 0.0, 0.0};   // radians about x, y, z
    Vec3 trans{0.0, 0.0, 0.0}; // millimetres
    Vec3 scale{1.0, 1.0, 1.0};

    static constexpr int kDof = 9;

    // Packed as [rx, ry, rz, tx, ty, tz, sx, sy, sz].
    std::array<double, kDof> to_array() const;
    static AffineParams from_array(std::span<const double> v);

    bool operator==(const AffineParams &) const = default;
};

Mat4 identity_mat4();
Mat4 multiply(const Mat4 &a, const Mat4 &b);
Mat4 invert(const Mat4 &m);
Vec3 apply(const Mat4 &m, const Vec3 &p);

// M = T(center) T(trans) Rz Ry Rx S(scale) T(-center).
Mat4 affine_matrix(const AffineParams &p, const Vec3 &center);

// dM / d(param k), k indexing the packed order of AffineParams::to_array().
Mat4 affine_matrix_derivative(const AffineParams &p, const Vec3 &center, int k);

// Maps output voxel indices to input voxel coordinates for warp_affine on a grid
// with the given spacing: D^-1 M^-1 D with D = diag(spacing).
Mat4 voxel_sampling_matrix(const Mat4 &world_matrix, const Vec3 &spacing);

// Trilinear interpolation at continuous voxel coordinates. Points outside
// [0, n-1] on any axis return 0.
double trilinear_sample(const Volume &vol, const Vec3 &p);

struct SampleWithGradient {
    double value = 0.0;
    Vec3 grad{0.0, 0.0, 0.0}; // d value / d p, voxel units
};

// Value and spatial derivative of the trilinear interpolant. On an interior grid
// plane the derivative across it is the mean of the two adjacent cell slopes.
SampleWithGradient trilinear_sample_gradient(const Volume &vol, const Vec3 &p);

// zero: samples outside the grid read 0. clamp: positions are clamped onto the
// grid, replicating the border.
enum class Boundary { zero, clamp };

Volume warp_affine(const Volume &vol, const AffineParams &p, Boundary boundary = Boundary::zero);

class DeformationField {
  public:
    DeformationField() = default;
    DeformationField(Index3 dims, Vec3 spacing);
    DeformationField(Index3 dims, Vec3 spacing, std::vector<double> disp);

    const Index3 &dims() const { return dims_; }
    const Vec3 &spacing() const { return spacing_; }
    size_t voxels() const { return disp_.size() / 3; }

    size_t index(int64_t i, int64_t j, int64_t k) const {
        return static_cast<size_t>(i + dims_[0] * (j + dims_[1] * k));
    }
    double &at(int64_t i, int64_t j, int64_t k, int c) { return disp_[3 * index(i, j, k) + static_cast<size_t>(c)]; }
    double at(int64_t i, int64_t j, int64_t k, int c) const {
        return disp_[3 * index(i, j, k) + static_cast<size_t>(c)];
    }

    // Component-interleaved storage: [dx0, dy0, dz0, dx1, ...].
    std::span<const double> data() const { return disp_; }
    std::span<double> data() { return disp_; }

  private:
    Index3 dims_{0, 0, 0};
    Vec3 spacing_{1.0, 1.0, 1.0};
    std::vector<double> disp_;
};

Volume warp_dense(const Volume &vol, const DeformationField &field);

// Displacement field (voxel units) reproducing warp_affine(vol, p) on vol's grid.
DeformationField affine_displacement(const Volume &grid, const AffineParams &p);

struct MultiResField {
    std::vector<DeformationField> residuals; // coarsest first
};

// Zero residuals shaped like build_pyramid(reference, levels).
MultiResField make_multires(const Volume &reference, int levels);

// Trilinear upsampling of a field onto target dims, aligning voxel centres
// (c = (i + 0.5) * n_src / n_dst - 0.5, edge clamped) and scaling each component by
// the dimension ratio of its axis.
DeformationField upsample_field(const DeformationField &field, const Index3 &target_dims, const Vec3 &target_spacing);

// Adjoint of upsample_field: pulls a gradient on the target grid back to the source grid.
DeformationField upsample_field_adjoint(const DeformationField &grad, const Index3 &source_dims,
                                        const Vec3 &source_spacing);

// Sum of all residuals, each upsampled to the finest level.
DeformationField compose_multires(const MultiResField &f);

} // namespace smind
