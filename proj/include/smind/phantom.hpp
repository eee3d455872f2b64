// phantom.hpp - deterministic synthetic multi-modal volume pairs with known transforms.

#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "smind/metrics.hpp"
#include "smind/transform.hpp"
#include "smind/volume.hpp"

namespace smind {

enum class RemapKind { identity, inverse, gamma, sigmoid_bands };

struct ModalityRemap {
    RemapKind kind = RemapKind::identity;
    double gamma = 2.0; // exponent for RemapKind::gamma

    double apply(double v) const;
};

std::string to_string(RemapKind kind);
RemapKind parse_remap_kind(const std::string &name);

// Smooth displacement along one axis: peak * exp(-|x - center|^2 / (2 radius^2)),
// all in voxel units.
struct BumpSpec {
    Vec3 center{0.0, 0.0, 0.0};
    double radius = 8.0;
    double peak = 4.0;
    int axis = 0;
};

struct PhantomSpec {
    Index3 dims{64, 64, 32};
    Vec3 spacing{1.0, 1.0, 1.0};
    uint64_t seed = 1;
    int n_blobs = 4;
    ModalityRemap remap;
    AffineParams transform;
    std::optional<BumpSpec> bump;
    double noise = 0.02; // standard deviation as a fraction of the dynamic range

    void validate() const;
};

struct PhantomPair {
    Volume fixed;
    Volume moving;
    LabelMask fixed_mask;
    LabelMask moving_mask;
    AffineParams ground_truth;
    std::optional<DeformationField> bump_field;
};

DeformationField bump_field(const BumpSpec &bump, const Index3 &dims, const Vec3 &spacing);

// fixed = normalized sum of anisotropic Gaussian blobs plus seeded noise; moving =
// remap of the same continuous object seen through the affine ground truth and
// then the optional bump, with independent noise. The masks are the support
// (Mahalanobis radius <= 1) of the largest blob, mapped the same way.
PhantomPair generate_pair(const PhantomSpec &spec);

} // namespace smind
