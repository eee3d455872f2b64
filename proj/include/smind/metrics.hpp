// metrics.hpp - overlap and deformation-regularity metrics.

#pragma once

#include "smind/transform.hpp"
#include "smind/volume.hpp"

namespace smind {

// Binary mask stored as 0/1 values on a volume grid.
struct LabelMask {
    Volume values;

    size_t count() const;
};

// Thresholds a volume at `threshold` (values >= threshold become 1).
LabelMask make_mask(const Volume &v, double threshold = 0.5);

// 2|A n B| / (|A| + |B|); two empty masks score 1.
double dice(const LabelMask &a, const LabelMask &b);

// Trilinear backward warp followed by a 0.5 threshold.
LabelMask warp_mask(const LabelMask &mask, const DeformationField &field);
LabelMask warp_mask(const LabelMask &mask, const AffineParams &p);

struct JacobianStats {
    double folding_percent = 0.0;
    double sigma_log_j = 0.0;
};

inline constexpr double kLogJacobianFloor = 1e-6;

// det(I + grad u) with central differences (one-sided at the borders). Voxels with
// J <= 0 count as folded; the log-Jacobian deviation uses voxels with J > 1e-6.
JacobianStats jacobian_stats(const DeformationField &field);

// Per-voxel Jacobian determinant, exposed for inspection.
Volume jacobian_determinant(const DeformationField &field);

} // namespace smind
