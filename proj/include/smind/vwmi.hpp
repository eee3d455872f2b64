// vwmi.hpp - variance-weighted mutual information for affine alignment.
//
// The joint histogram is a Parzen estimate with a Gaussian kernel of one bin width,
// truncated at three bandwidths (shifted so it reaches zero continuously at the
// cutoff) and renormalized per sample, so every voxel contributes unit mass.

#pragma once

#include <array>
#include <stdexcept>
#include <vector>

#include "smind/transform.hpp"
#include "smind/volume.hpp"

namespace smind {

struct HistogramConfig {
    int bins = 32;
    double kernel_bandwidth = 0.0; // intensity units; <= 0 selects one bin width
    double epsilon = 1e-7;

    double bandwidth() const { return kernel_bandwidth > 0.0 ? kernel_bandwidth : 1.0 / bins; }
    void validate() const;
};

struct WeightMap {
    Volume values;
};

class DegenerateWeightsError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// Per-voxel variance over a window^3 neighbourhood, truncated at the borders.
Volume local_variance(const Volume &vol, int window = 7);

// sqrt(sigma_f * sigma_m) normalized by its maximum; all zeros when that maximum is 0.
WeightMap weight_map(const Volume &fixed, const Volume &moving, int window = 7);

// Weight map for moving resampled by p: the moving variance is computed on the
// native grid and then warped, so zero-filled regions outside the moving field of
// view cannot create artificial edges.
WeightMap warped_weight_map(const Volume &fixed, const Volume &moving, const AffineParams &p, int window = 7);

WeightMap uniform_weight_map(const Volume &like);

// Row index is the fixed-image bin, column index the moving-image bin.
struct JointHistogram {
    int bins = 0;
    std::vector<double> p;

    double operator()(int i, int j) const { return p[static_cast<size_t>(i * bins + j)]; }
    std::vector<double> fixed_marginal() const;
    std::vector<double> moving_marginal() const;
};

// Sparse, renormalized kernel weights of one intensity over the bin centres.
class ParzenKernel {
  public:
    static constexpr int kMaxTaps = 16;

    explicit ParzenKernel(const HistogramConfig &cfg);

    struct Taps {
        int first = 0;
        int count = 0;
        std::array<double, kMaxTaps> w{};
        std::array<double, kMaxTaps> dw{}; // d w / d intensity
    };

    Taps evaluate(double v) const;
    int bins() const { return bins_; }

  private:
    int bins_;
    double h_;
    double cutoff_;
    double floor_;
};

JointHistogram weighted_joint_histogram(const Volume &fixed, const Volume &moving, const WeightMap &m,
                                        const HistogramConfig &cfg);

// 1 - sum P log((P + eps) / (Pf Pm + eps)).
double vwmi_loss(const Volume &fixed, const Volume &moving_warped, const WeightMap &m, const HistogramConfig &cfg);

// Loss of warp_affine(moving, p) against fixed, and its gradient with respect to
// the packed affine parameters.
//
// Weights come either from a given map (held fixed) or, with TrackedWeights, from
// the local variances of fixed and of the moving volume carried along by p, so the
// map always describes the pair as currently aligned; its dependence on p is then
// part of the gradient. (The map's peak normalization cancels in the histogram.)
//
// Each sample's weight is further multiplied by a C1 taper that falls to 0 at the
// moving grid boundary over `fov_taper` voxels, so the histogram covers only the
// overlap of the two fields of view (samples outside read 0, which would otherwise
// form a spurious intensity class). fov_taper = 0 disables it.
struct TrackedWeights {
    int window = 7;
};

class VwmiObjective {
  public:
    VwmiObjective(const Volume &fixed, const Volume &moving, WeightMap m, const HistogramConfig &cfg,
                  double fov_taper = 1.0);
    // Throws DegenerateWeightsError when either volume has zero variance everywhere.
    VwmiObjective(const Volume &fixed, const Volume &moving, TrackedWeights tracked, const HistogramConfig &cfg,
                  double fov_taper = 1.0);

    struct Result {
        double loss = 0.0;
        std::array<double, AffineParams::kDof> grad{};
    };

    Result evaluate(const AffineParams &p, bool with_gradient = true) const;

  private:
    Volume fixed_;
    Volume moving_;
    Volume weights_;          // fixed map, or fixed-side factor var_f^(1/4) when tracking
    Volume moving_variance_;  // native grid; empty unless tracking
    bool tracking_ = false;
    HistogramConfig cfg_;
    ParzenKernel kernel_;
    double fov_taper_;
    std::vector<size_t> active_; // voxels whose weight can be nonzero
};

std::array<double, AffineParams::kDof> vwmi_gradient(const Volume &fixed, const Volume &moving, const WeightMap &m,
                                                     const AffineParams &p, const HistogramConfig &cfg);

} // namespace smind
