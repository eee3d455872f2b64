// smind_loss.hpp - search-based MIND similarity, diffusion regularization and the
// combined deformable objective.
//
// For each voxel and each axis, the warped features are compared against the fixed
// features at integer shifts s in [-r, r]; a softmin with centre bias turns the
// distances into an expected matching cost. Shifted lookups that leave the grid
// reuse the unshifted distance.

#pragma once

#include <vector>

#include "smind/mind.hpp"
#include "smind/transform.hpp"
#include "smind/volume.hpp"

namespace smind {

struct SMindConfig {
    int radius = 4;
    double tau = 0.05;
    double sigma = 2.0;

    void validate() const;
};

struct DeformLossConfig {
    SMindConfig smind;
    double lambda = 1.0;
    int levels = 3;
    double similarity_weight = 1.0; // 0 isolates the regularizer

    void validate() const;
};

enum class Axis { x = 0, y = 1, z = 2 };

// L2 channel distance between ff(x) and fw(x + s e_axis).
Volume shift_distance(const MindFeatures &ff, const MindFeatures &fw, Axis axis, int s);

// distances[s + r] holds d_s for s in [-r, r]; returns p(s | x) in the same layout.
std::vector<Volume> softmin_weights(const std::vector<Volume> &distances, const SMindConfig &cfg);

Volume expected_cost(const std::vector<Volume> &distances, const std::vector<Volume> &weights);

// Mean over axes of the spatial mean of the expected cost, comparing MIND(fixed)
// with MIND(warp_dense(moving, field)).
double smind_loss(const Volume &fixed, const Volume &moving, const DeformationField &field, const SMindConfig &cfg);

// Same quantity from precomputed features, evaluated voxel by voxel. When
// grad_warped_features is non-null it receives d loss / d fw (channel-interleaved).
double smind_loss_fused(const MindFeatures &ff, const MindFeatures &fw, const SMindConfig &cfg,
                        std::vector<double> *grad_warped_features);

// (1/L) sum_l mean over voxels and components of squared forward differences;
// differences that would leave the grid contribute zero.
double diffusion_reg(const MultiResField &f);
MultiResField diffusion_reg_gradient(const MultiResField &f);

// Similarity plus lambda * diffusion_reg. The moving image is sampled at positions
// clamped onto its grid (border replicated) rather than zero-filled, so the field
// gains nothing from pulling the outside into view.
class DeformObjective {
  public:
    DeformObjective(const Volume &fixed, const Volume &moving, const DeformLossConfig &cfg);

    struct Result {
        double loss = 0.0;
        double similarity = 0.0;
        double regularization = 0.0;
        MultiResField grad; // empty unless requested
    };

    Result evaluate(const MultiResField &f, bool with_gradient = true) const;

  private:
    Volume fixed_;
    Volume moving_;
    DeformLossConfig cfg_;
    MindFeatures fixed_features_;
};

double deform_loss(const Volume &fixed, const Volume &moving, const MultiResField &f, const DeformLossConfig &cfg);
MultiResField deform_gradient(const Volume &fixed, const Volume &moving, const MultiResField &f,
                              const DeformLossConfig &cfg);

} // namespace smind
