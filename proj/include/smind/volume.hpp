// volume.hpp - dense 3D scalar volumes, spatial and intensity normalization, pyramids.
//
// Memory layout is x-fastest: index = i + nx * (j + ny * k). World coordinates of
// voxel (i, j, k) are (i * sx, j * sy, k * sz) millimetres.

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace smind {

using Index3 = std::array<int64_t, 3>;
using Vec3 = std::array<double, 3>;

struct GridSpec {
    Vec3 target_spacing{1.0, 1.0, 2.5};
    Index3 target_dims{256, 256, 48};
};

class Volume {
  public:
    Volume() = default;
    Volume(Index3 dims, Vec3 spacing, double fill = 0.0);
    Volume(Index3 dims, Vec3 spacing, std::vector<double> data);

    const Index3 &dims() const { return dims_; }
    const Vec3 &spacing() const { return spacing_; }
    int64_t nx() const { return dims_[0]; }
    int64_t ny() const { return dims_[1]; }
    int64_t nz() const { return dims_[2]; }
    size_t size() const { return data_.size(); }

    size_t index(int64_t i, int64_t j, int64_t k) const {
        return static_cast<size_t>(i + dims_[0] * (j + dims_[1] * k));
    }
    double operator()(int64_t i, int64_t j, int64_t k) const { return data_[index(i, j, k)]; }
    double &operator()(int64_t i, int64_t j, int64_t k) { return data_[index(i, j, k)]; }
    double operator[](size_t n) const { return data_[n]; }
    double &operator[](size_t n) { return data_[n]; }

    std::span<const double> data() const { return data_; }
    std::span<double> data() { return data_; }

    // Physical centre of the grid, used as the rotation/scaling origin.
    Vec3 center() const;

    bool same_grid(const Volume &other) const { return dims_ == other.dims_; }

  private:
    Index3 dims_{0, 0, 0};
    Vec3 spacing_{1.0, 1.0, 1.0};
    std::vector<double> data_;
};

// Trilinear resampling onto a grid covering the same physical extent at a new
// spacing. Output dims are round(n * s / t), at least 1. Sample positions past the
// last input voxel are clamped to the edge.
Volume resample(const Volume &vol, const Vec3 &target_spacing);

// Centre the content on a grid of target_dims, cropping or zero padding per axis.
Volume crop_or_pad(const Volume &vol, const Index3 &target_dims);

// Min-max rescale to [0, 1]; a constant volume maps to all zeros. Throws
// std::invalid_argument on NaN or infinite intensities.
Volume normalize_intensity(const Volume &vol);

// Separable Gaussian blur, sigma in voxels, kernel truncated at 3 sigma with
// edge-clamped taps. sigma <= 0 returns a copy.
Volume gaussian_smooth(const Volume &vol, double sigma);

// 2x2x2 block mean, dims halved (floor) and spacing doubled.
Volume downsample2(const Volume &vol);

// Coarsest level first; the last element is the input itself.
std::vector<Volume> build_pyramid(const Volume &vol, int levels);

// Full preprocessing chain: intensity normalization, resampling, crop/pad.
Volume preprocess(const Volume &vol, const GridSpec &grid);

} // namespace smind
