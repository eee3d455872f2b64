// mind.hpp - modality independent neighbourhood descriptor over the 6-neighbourhood.
//
// D(x, n) is the Gaussian-weighted (radius 1, sigma 0.5) patch SSD between x and
// x + n, V(x) the mean of the six distances floored at 1e-6, and channel n is
// exp(-D(x, n) / V(x)) divided by the per-voxel maximum. Lookups past the grid edge
// are clamped to the edge voxel.

#pragma once

#include <array>
#include <vector>

#include "smind/volume.hpp"

namespace smind {

inline constexpr int kMindChannels = 6;
inline constexpr double kMindVarianceFloor = 1e-6;

// +x, -x, +y, -y, +z, -z
inline constexpr std::array<std::array<int, 3>, kMindChannels> kMindOffsets{
    {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}}};

struct MindFeatures {
    Index3 dims{0, 0, 0};
    std::vector<double> values; // channel-interleaved: values[voxel * 6 + channel]

    size_t voxels() const { return values.size() / kMindChannels; }
    double operator()(size_t voxel, int channel) const {
        return values[voxel * kMindChannels + static_cast<size_t>(channel)];
    }
};

MindFeatures mind_features(const Volume &vol);

// Forward intermediates needed to back-propagate through mind_features.
struct MindCache {
    std::array<std::vector<double>, kMindChannels> distance;
    std::vector<double> variance;
    std::vector<unsigned char> variance_clamped;
    std::vector<unsigned char> argmin;
};

MindFeatures mind_features(const Volume &vol, MindCache &cache);

// Gradient of sum(grad_features . features) with respect to the input intensities.
std::vector<double> mind_features_backward(const Volume &vol, const MindFeatures &features, const MindCache &cache,
                                           const std::vector<double> &grad_features);

} // namespace smind
